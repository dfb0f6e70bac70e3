//! Prompt assembly from the session's artifact store.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde_json::Value;

use super::engine::{OrchestratorError, Workflow};
use super::session::SessionState;
use crate::agents::spec::{self, ADVISOR_CONTEXT, FINALIZED_CATEGORIES, KPI_PLAN, KPI_TABLE, SENTINEL};
use crate::agents::{AgentError, AgentKind, AgentName, AgentSpec, ChatMessage, KpiPlan, Prompt, Role};
use crate::evidence::Kpi;
use crate::taxonomy::{lookup_codes, KviDefinition};

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

/// Consolidated advisor input: finalized categories, the KPI table and every
/// stored result, in the order they were computed.
pub fn advisor_context(session: &SessionState) -> Result<Value, OrchestratorError> {
    if session.stage_index != 9 {
        return Err(OrchestratorError::Stage { expected: 9, actual: session.stage_index });
    }
    let get = |k: &str| session.artifacts.get(k).cloned().unwrap_or(Value::Null);
    let results: Vec<Value> = session.kvi_result_keys().iter().map(|k| session.artifacts[*k].clone()).collect();
    Ok(serde_json::json!({
        "finalized_categories": get(FINALIZED_CATEGORIES),
        "kpi_table": get(KPI_TABLE),
        "kvi_results": results,
    }))
}

pub(crate) fn plan_of(session: &SessionState) -> Vec<Kpi> {
    session
        .artifacts
        .get(KPI_PLAN)
        .and_then(|v| serde_json::from_value::<KpiPlan>(v.clone()).ok())
        .map(|p| p.kpis)
        .unwrap_or_default()
}

pub(crate) fn finalized_ids(session: &SessionState) -> Vec<String> {
    session
        .artifacts
        .get(FINALIZED_CATEGORIES)
        .and_then(|v| v.get("category_ids"))
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

/// First planned KPI that has no collected value yet.
pub(crate) fn next_missing(session: &SessionState) -> Option<Kpi> {
    plan_of(session).into_iter().find(|k| !session.collected.iter().any(|v| v.kpi_id == k.id))
}

fn collection_status(session: &SessionState) -> String {
    let mut out = String::new();
    for k in plan_of(session) {
        let _ = write!(out, "- {} ({}, {}): ", k.id, k.symbol, k.unit);
        match session.collected.iter().rev().find(|v| v.kpi_id == k.id) {
            Some(v) => {
                let _ = writeln!(out, "{} {} [{}]", v.value, v.unit, v.provenance);
            }
            None => out.push_str("missing\n"),
        }
    }
    out
}

pub fn definition_block(defn: &KviDefinition, cot: bool) -> String {
    let mut out = format!(
        "{}: {}\nUnit: {}\nFormula: {}\nKPI symbols: {}\n",
        defn.code,
        defn.title,
        defn.unit,
        defn.formula,
        defn.kpi_symbols.join(", ")
    );
    if cot && !defn.narrative.is_empty() {
        out.push_str("Work through these steps before answering:\n");
        for (i, step) in defn.narrative.iter().enumerate() {
            let _ = writeln!(out, "{}. {step}", i + 1);
        }
    }
    out
}

fn taxonomy_block(wf: &Workflow) -> String {
    if !wf.taxonomy_in_prompts {
        return String::new();
    }
    format!("KVI taxonomy ({}):\n{}\n", wf.taxonomy.version, wf.taxonomy.render_for_prompt())
}

fn definitions_block(session: &SessionState, wf: &Workflow) -> String {
    if !wf.taxonomy_in_prompts {
        return String::new();
    }
    let defs = lookup_codes(&wf.taxonomy, &finalized_ids(session)).unwrap_or_default();
    if defs.is_empty() {
        return String::new();
    }
    let mut out = String::from("KVI definitions in scope:\n");
    for d in defs {
        let _ = writeln!(out, "- {} ({}, {}): {} over {}", d.code, d.title, d.unit, d.formula, d.kpi_symbols.join(", "));
    }
    out.push('\n');
    out
}

fn instruction(spec: &AgentSpec, target: Option<&KviDefinition>) -> String {
    match (spec.name, target) {
        (AgentName::KviCalculator, Some(d)) => format!("Compute {} now.", d.code),
        _ => format!("Produce the {} now.", spec.output_key.unwrap_or("artifact").trim_end_matches(':')),
    }
}

/// Single-pass `{name}` substitution; unknown names are left as written.
fn fill(template: &str, vars: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail.find('}').map(|close| (&tail[1..close], close)) {
            Some((name, close)) if vars.contains_key(name) => {
                out.push_str(&vars[name]);
                rest = &tail[close + 1..];
            }
            _ => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Builds the prompt for `spec` from the session. `target` names the KVI
/// during stage 8.
///
/// Only artifacts listed in `spec.context_keys` are embedded; a missing key
/// is a stage-order error.
pub fn build_context(
    spec: &AgentSpec,
    session: &SessionState,
    wf: &Workflow,
    target: Option<&KviDefinition>,
) -> Result<Prompt, AgentError> {
    let mut vars: HashMap<&str, String> = HashMap::new();
    for key in spec.context_keys {
        let value = if *key == ADVISOR_CONTEXT {
            advisor_context(session).map_err(|_| AgentError::StageOrder {
                agent: spec.name.to_string(),
                key: (*key).to_string(),
            })?
        } else {
            session.artifacts.get(*key).cloned().ok_or_else(|| AgentError::StageOrder {
                agent: spec.name.to_string(),
                key: (*key).to_string(),
            })?
        };
        vars.insert(key, pretty(&value));
    }
    if spec.name == AgentName::KviCalculator {
        let defn = target.ok_or_else(|| AgentError::StageOrder {
            agent: spec.name.to_string(),
            key: spec::KVI_RESULT_PREFIX.to_string(),
        })?;
        vars.insert("definition_block", definition_block(defn, spec.cot_enabled));
    }
    if spec.prompt_template.contains("{definitions_block}") {
        vars.insert("definitions_block", definitions_block(session, wf));
    }
    if spec.prompt_template.contains("{collection_status}") {
        vars.insert("collection_status", collection_status(session));
    }
    vars.insert("taxonomy_block", taxonomy_block(wf));
    vars.insert("schema", spec.schema_hint.unwrap_or("").to_string());
    vars.insert("sentinel", SENTINEL.to_string());
    let system = fill(spec.prompt_template, &vars);

    let messages = match spec.kind {
        AgentKind::Conversational => session
            .history
            .iter()
            .filter(|h| h.agent == spec.name)
            .map(|h| ChatMessage { role: h.role, content: h.text.clone() })
            .collect(),
        AgentKind::Structured => {
            let mut m: Vec<ChatMessage> = session
                .history
                .iter()
                .filter(|h| h.agent == spec.name && h.role == Role::User)
                .map(|h| ChatMessage::user(h.text.clone()))
                .collect();
            m.push(ChatMessage::user(instruction(spec, target)));
            m
        }
    };
    Ok(Prompt { system, messages })
}

//! Completion detection, structured-output parsing and single-agent execution.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::provider::{ChatMessage, CompletionRequest, Provider, ProviderError};
use super::spec::{AgentKind, AgentName, AgentSpec, SENTINEL};
use crate::calculus::KviResult;
use crate::evidence::{parse_table_rows, Kpi};

/// Category list produced by the extractor and the finalizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySelection {
    pub category_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// KPI plan produced by the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiPlan {
    pub kpis: Vec<Kpi>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub display_text: String,
    pub artifact: Option<Value>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutputError {
    #[error("no fenced JSON block in the reply")]
    NoJsonBlock,
    #[error("fenced block is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("{agent} needs artifact `{key}`, which is not stored yet")]
    StageOrder { agent: String, key: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{agent} gave no usable structured output after a retry: {source}")]
    StructuredOutput { agent: String, source: OutputError },
}

impl AgentError {
    pub fn is_retriable(&self) -> bool {
        match self {
            AgentError::Provider(e) => e.is_retriable(),
            AgentError::StageOrder { .. } => false,
            AgentError::StructuredOutput { .. } => true,
        }
    }

    /// Short machine-readable class used in error events.
    pub fn kind(&self) -> &'static str {
        match self {
            AgentError::StageOrder { .. } => "stage-order",
            AgentError::Provider(_) => "provider",
            AgentError::StructuredOutput { .. } => "structured-output",
        }
    }
}

static FENCE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[ \t]*(?:json|JSON)?[ \t]*\r?\n(.*?)```").unwrap());

/// True iff the reply's last non-blank line is exactly the sentinel.
/// Structured agents are always complete.
pub fn detect_completion(spec: &AgentSpec, text: &str) -> bool {
    match spec.kind {
        AgentKind::Structured => true,
        AgentKind::Conversational => text.trim_end().lines().last().map(str::trim) == Some(SENTINEL),
    }
}

/// Reply text as shown to the user: no sentinel anywhere.
pub fn display_text(text: &str) -> String {
    let kept: Vec<&str> = text.lines().filter(|l| l.trim() != SENTINEL).collect();
    kept.join("\n").replace(SENTINEL, "").trim().to_string()
}

/// First fenced JSON block, and the text with that block removed.
pub fn extract_json_block(text: &str) -> Result<(Value, String), OutputError> {
    let m = FENCE_RE.captures(text).ok_or(OutputError::NoJsonBlock)?;
    let whole = m.get(0).unwrap();
    let value: Value = serde_json::from_str(m.get(1).unwrap().as_str().trim())
        .map_err(|e| OutputError::InvalidJson(e.to_string()))?;
    let rest = format!("{}{}", &text[..whole.start()], &text[whole.end()..]);
    Ok((value, rest.trim().to_string()))
}

fn typed<T: DeserializeOwned>(value: &Value) -> Result<T, OutputError> {
    serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let field = e.path().to_string();
        OutputError::Schema { field, message: e.into_inner().to_string() }
    })
}

fn schema_err(field: impl Into<String>, message: impl Into<String>) -> OutputError {
    OutputError::Schema { field: field.into(), message: message.into() }
}

/// Validates `value` against the agent's schema and returns it in canonical
/// form.
pub fn validate_structured(agent: AgentName, value: &Value) -> Result<Value, OutputError> {
    match agent {
        AgentName::KviCategoryExtractor | AgentName::KviCategoryFinalizer => {
            let sel: CategorySelection = typed(value)?;
            if let Some(i) = sel.category_ids.iter().position(|c| c.trim().is_empty()) {
                return Err(schema_err(format!("category_ids[{i}]"), "empty category id"));
            }
            Ok(serde_json::to_value(sel).unwrap())
        }
        AgentName::KpiGenerator => {
            let plan: KpiPlan = typed(value)?;
            if plan.kpis.is_empty() {
                return Err(schema_err("kpis", "plan lists no KPIs"));
            }
            let mut ids = HashSet::new();
            let mut symbols = HashSet::new();
            for (i, k) in plan.kpis.iter().enumerate() {
                if !k.symbol_is_valid() {
                    return Err(schema_err(format!("kpis[{i}].symbol"), format!("`{}` is not a formula symbol", k.symbol)));
                }
                if k.id.trim().is_empty() || !ids.insert(k.id.as_str()) {
                    return Err(schema_err(format!("kpis[{i}].id"), format!("id `{}` is empty or repeated", k.id)));
                }
                if !symbols.insert(k.symbol.as_str()) {
                    return Err(schema_err(format!("kpis[{i}].symbol"), format!("symbol `{}` repeated", k.symbol)));
                }
                if k.unit.trim().is_empty() {
                    return Err(schema_err(format!("kpis[{i}].unit"), "empty unit"));
                }
            }
            Ok(serde_json::to_value(plan).unwrap())
        }
        AgentName::KpiStructurer => {
            parse_table_rows(value).map_err(|e| schema_err("rows", e.to_string()))?;
            Ok(value.clone())
        }
        AgentName::KviCalculator => {
            let r: KviResult = typed(value)?;
            for (field, v) in [("exact", r.exact), ("min", r.min), ("max", r.max)] {
                if !v.is_finite() {
                    return Err(schema_err(field, "not a finite number"));
                }
            }
            Ok(serde_json::to_value(r).unwrap())
        }
        other => Err(schema_err("", format!("{other} has no structured output"))),
    }
}

/// Extracts and validates the structured artifact of a reply.
pub fn parse_structured_output(spec: &AgentSpec, text: &str) -> Result<Value, OutputError> {
    let (value, _) = extract_json_block(text)?;
    validate_structured(spec.name, &value)
}

fn retry_message(err: &OutputError, schema: Option<&str>) -> String {
    let mut m = format!("Your reply could not be used ({err}). Reply again with exactly one fenced JSON block");
    match schema {
        Some(s) => m.push_str(&format!(" in this shape:\n{s}")),
        None => m.push('.'),
    }
    m
}

/// Sends one request and advances `turn`.
pub fn call_provider(
    provider: &dyn Provider,
    agent: &str,
    turn: &mut usize,
    attempt: u32,
    subject: Option<&str>,
    prompt: &Prompt,
) -> Result<String, ProviderError> {
    let request = CompletionRequest {
        agent: agent.to_string(),
        turn: *turn,
        attempt,
        subject: subject.map(str::to_string),
        system: prompt.system.clone(),
        messages: prompt.messages.clone(),
    };
    *turn += 1;
    provider.complete(&request)
}

/// Runs one agent turn. Structured agents get one re-prompt restating the
/// schema when the reply is unusable. Every provider call advances `turn`.
pub fn run_agent(
    spec: &AgentSpec,
    prompt: &Prompt,
    provider: &dyn Provider,
    turn: &mut usize,
    subject: Option<&str>,
) -> Result<AgentOutput, AgentError> {
    let agent = spec.name.as_str();
    let text = call_provider(provider, agent, turn, 0, subject, prompt)?;
    if spec.kind == AgentKind::Conversational {
        return Ok(AgentOutput { display_text: display_text(&text), artifact: None, complete: detect_completion(spec, &text) });
    }

    let first = match structured(spec, &text) {
        Ok(out) => return Ok(out),
        Err(e) => e,
    };
    tracing::debug!(agent, error = %first, "re-prompting for structured output");
    let mut retry = prompt.clone();
    retry.messages.push(ChatMessage::assistant(text));
    retry.messages.push(ChatMessage::user(retry_message(&first, spec.schema_hint)));
    let text = call_provider(provider, agent, turn, 1, subject, &retry)?;
    structured(spec, &text).map_err(|source| AgentError::StructuredOutput { agent: agent.to_string(), source })
}

fn structured(spec: &AgentSpec, text: &str) -> Result<AgentOutput, OutputError> {
    let (value, rest) = extract_json_block(text)?;
    let artifact = validate_structured(spec.name, &value)?;
    let mut shown = display_text(&rest);
    if shown.is_empty() {
        shown = format!("{} stored `{}`.", spec.name, spec.output_key.unwrap_or_default().trim_end_matches(':'));
    }
    Ok(AgentOutput { display_text: shown, artifact: Some(artifact), complete: true })
}

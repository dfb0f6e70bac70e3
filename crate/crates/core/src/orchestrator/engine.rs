//! The staged state machine driving one user turn.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::context::{build_context, finalized_ids, next_missing, plan_of};
use super::session::{now_ms, HistoryEntry, SessionState};
use crate::agents::spec::{estimate_prompt, KPI_COLLECTION_TRANSCRIPT, KPI_TABLE};
use crate::agents::{
    agent_spec, call_provider, kvi_result_key, run_agent, AgentError, AgentKind, AgentName, AgentOutput, AgentSpec,
    ChatMessage, Prompt, Provider, Role,
};
use crate::calculus::{compute_kvi, verify_result, KviError, KviResult};
use crate::evidence::{
    build_kpi_table, normalize_unit, parse_value_utterance, Kpi, KpiTable, KpiValue, ParsedKind, Provenance,
};
use crate::taxonomy::{fixture_taxonomy, lookup_codes, KviDefinition, Taxonomy};

/// Pipeline configuration shared by every session of a deployment.
#[derive(Debug, Clone)]
pub struct Workflow {
    pub taxonomy: Arc<Taxonomy>,
    /// Render the taxonomy and definitions into prompts.
    pub taxonomy_in_prompts: bool,
    /// Calculator mode. On: numbers come from the interval calculus and the
    /// provider only adds narrative. Off: the provider's numbers are adopted
    /// and verified.
    pub cot: bool,
}

impl Workflow {
    pub fn new(taxonomy: Taxonomy) -> Workflow {
        Workflow { taxonomy: Arc::new(taxonomy), taxonomy_in_prompts: true, cot: true }
    }

    pub fn fixture() -> Workflow {
        Self::new(fixture_taxonomy())
    }

    pub fn spec(&self, agent: AgentName) -> AgentSpec {
        agent_spec(agent, self.cot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Progress,
    Content,
    Artifact,
    Error,
    Done,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Progress => "progress",
            EventKind::Content => "content",
            EventKind::Artifact => "artifact",
            EventKind::Error => "error",
            EventKind::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub agent: AgentName,
    pub stage: u8,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("operation needs stage {expected}, session is at stage {actual}")]
    Stage { expected: u8, actual: u8 },
}

/// Handles one user message and returns the emitted events.
pub fn handle_user_turn(session: &mut SessionState, message: &str, provider: &dyn Provider, wf: &Workflow) -> Vec<Event> {
    let mut events = Vec::new();
    handle_user_turn_with(session, message, provider, wf, &mut |e: &Event| events.push(e.clone()));
    events
}

/// Streaming form of [`handle_user_turn`]: `emit` sees each event as soon as
/// it is produced. The last event is always `done`.
pub fn handle_user_turn_with(
    session: &mut SessionState,
    message: &str,
    provider: &dyn Provider,
    wf: &Workflow,
    emit: &mut dyn FnMut(&Event),
) {
    let agent = session.current_agent;
    session.history.push(HistoryEntry { role: Role::User, agent, text: message.to_string() });
    let mut run = Run { s: session, provider, wf, emit };
    match agent {
        AgentName::KpiCollector => run.collector_turn(message),
        a if a.kind() == AgentKind::Conversational => run.conversational_turn(a),
        _ => {
            run.chain();
        }
    }
    run.s.updated_at_ms = now_ms();
    let stage = run.s.stage_index;
    run.event(EventKind::Done, run.s.current_agent, json!({ "stage": stage }));
}

struct Run<'a> {
    s: &'a mut SessionState,
    provider: &'a dyn Provider,
    wf: &'a Workflow,
    emit: &'a mut dyn FnMut(&Event),
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn summary(r: &KviResult) -> String {
    let mut s = format!("{} = {} {}, bounds [{}, {}]", r.code, r.exact, r.unit, r.min, r.max);
    if !r.flags.is_empty() {
        s.push_str(&format!(" (flags: {})", r.flags.join(", ")));
    }
    s
}

impl Run<'_> {
    fn event(&mut self, kind: EventKind, agent: AgentName, payload: Value) {
        let e = Event { kind, agent, stage: self.s.stage_index, payload };
        (self.emit)(&e);
    }

    fn say(&mut self, agent: AgentName, text: String) {
        self.s.history.push(HistoryEntry { role: Role::Assistant, agent, text: text.clone() });
        self.event(EventKind::Content, agent, Value::String(text));
    }

    fn fail(&mut self, agent: AgentName, kind: &str, message: String, retriable: bool) {
        tracing::warn!(agent = %agent, kind, %message, "turn error");
        self.event(EventKind::Error, agent, json!({ "message": message, "retriable": retriable, "kind": kind }));
    }

    fn agent_error(&mut self, agent: AgentName, e: &AgentError) {
        self.fail(agent, e.kind(), e.to_string(), e.is_retriable());
    }

    fn store(&mut self, agent: AgentName, key: String, value: Value) {
        self.s.artifacts.insert(key.clone(), value.clone());
        self.event(EventKind::Artifact, agent, json!({ "key": key, "value": value }));
    }

    fn advance(&mut self) {
        self.s.stage_index += 1;
        let agent = AgentName::for_stage(self.s.stage_index).expect("stage within 1..=9");
        self.s.current_agent = agent;
        let stage = self.s.stage_index;
        self.event(EventKind::Progress, agent, json!({ "stage": stage }));
        match agent {
            AgentName::KpiCollector => {
                self.s.collected.clear();
                if let Some(k) = next_missing(self.s) {
                    self.ask(&k);
                }
            }
            AgentName::KviCalculator => self.s.kvi_cursor = 0,
            _ => {}
        }
    }

    fn call(&mut self, spec: &AgentSpec, target: Option<&KviDefinition>) -> Result<AgentOutput, AgentError> {
        let prompt = build_context(spec, self.s, self.wf, target)?;
        let name = spec.name.as_str();
        let mut turn = self.s.turn_of(name);
        let out = run_agent(spec, &prompt, self.provider, &mut turn, target.map(|d| d.code.as_str()));
        self.s.turns.insert(name.to_string(), turn);
        out
    }

    fn conversational_turn(&mut self, agent: AgentName) {
        let spec = self.wf.spec(agent);
        let out = match self.call(&spec, None) {
            Ok(out) => out,
            Err(e) => return self.agent_error(agent, &e),
        };
        self.say(agent, out.display_text);
        if out.complete && agent != AgentName::KviAdvisor {
            let key = spec.output_key.expect("conversational stages before the advisor store a transcript");
            let transcript = self.s.transcript(agent);
            self.store(agent, key.to_string(), transcript);
            self.advance();
            self.chain();
        }
    }

    /// Runs structured stages until a conversational one needs the user or a
    /// stage fails.
    fn chain(&mut self) {
        loop {
            let agent = self.s.current_agent;
            if agent.kind() == AgentKind::Conversational {
                return;
            }
            let ok = match agent {
                AgentName::KviCalculator => self.calculate(),
                _ => self.structured_stage(agent),
            };
            if !ok {
                return;
            }
        }
    }

    fn structured_stage(&mut self, agent: AgentName) -> bool {
        let spec = self.wf.spec(agent);
        let out = match self.call(&spec, None) {
            Ok(out) => out,
            Err(e) => {
                self.agent_error(agent, &e);
                return false;
            }
        };
        let value = out.artifact.expect("structured output carries an artifact");
        let stored = match agent {
            AgentName::KviCategoryFinalizer => self.reconcile_categories(&value),
            AgentName::KpiStructurer => match self.evidence_table() {
                Ok(t) => t,
                Err(message) => {
                    self.fail(agent, "evidence", message, false);
                    return false;
                }
            },
            _ => value,
        };
        self.say(agent, out.display_text);
        self.store(agent, spec.output_key.expect("structured stage has an output key").to_string(), stored);
        self.advance();
        true
    }

    /// Keeps ids the taxonomy knows, once each, in the finalizer's order.
    fn reconcile_categories(&self, value: &Value) -> Value {
        let ids: Vec<String> = serde_json::from_value(value["category_ids"].clone()).unwrap_or_default();
        let mut kept: Vec<String> = Vec::new();
        let mut unknown: Vec<String> = Vec::new();
        for id in ids {
            if kept.contains(&id) || unknown.contains(&id) {
                continue;
            }
            if self.wf.taxonomy.category(&id).is_some() {
                kept.push(id);
            } else {
                unknown.push(id);
            }
        }
        let mut out = json!({ "category_ids": kept });
        if let Some(notes) = value.get("notes") {
            out["notes"] = notes.clone();
        }
        if !unknown.is_empty() {
            out["unknown_ids"] = json!(unknown);
        }
        out
    }

    /// The stored table is rebuilt from the collected values so that numbers
    /// never depend on the structurer's transcription.
    fn evidence_table(&self) -> Result<Value, String> {
        let plan = plan_of(self.s);
        let values: Vec<KpiValue> = self
            .s
            .artifacts
            .get(KPI_COLLECTION_TRANSCRIPT)
            .and_then(|t| t.get("values"))
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()
            .map_err(|e| format!("collection transcript values are malformed: {e}"))?
            .unwrap_or_default();
        build_kpi_table(&plan, &values).map(|t| t.to_json()).map_err(|e| e.to_string())
    }

    fn calculate(&mut self) -> bool {
        let agent = AgentName::KviCalculator;
        let defs = match lookup_codes(&self.wf.taxonomy, &finalized_ids(self.s)) {
            Ok(d) => d,
            Err(e) => {
                self.fail(agent, "taxonomy", e.to_string(), false);
                return false;
            }
        };
        let plan = plan_of(self.s);
        let table = match self.s.artifacts.get(KPI_TABLE).map(|v| KpiTable::from_json(v, &plan)) {
            Some(Ok(t)) => t,
            Some(Err(e)) => {
                self.fail(agent, "evidence", e.to_string(), false);
                return false;
            }
            None => {
                let e = AgentError::StageOrder { agent: agent.to_string(), key: KPI_TABLE.to_string() };
                self.agent_error(agent, &e);
                return false;
            }
        };
        let spec = self.wf.spec(agent);
        while self.s.kvi_cursor < defs.len() {
            let defn = &defs[self.s.kvi_cursor];
            let computed = compute_kvi(defn, &table);
            let reply = self.call(&spec, Some(defn));
            if let Err(e) = &reply {
                if e.kind() != "structured-output" {
                    self.agent_error(agent, e);
                    return false;
                }
            }
            let result = settle(defn, computed, reply, self.wf.cot);
            self.say(agent, summary(&result));
            self.store(agent, kvi_result_key(&defn.code), serde_json::to_value(&result).expect("result serializes"));
            self.s.kvi_cursor += 1;
        }
        self.advance();
        true
    }

    fn ask(&mut self, k: &Kpi) {
        let mut text = format!("Next KPI: {} ({}), in {}.", k.name, k.symbol, k.unit);
        if !k.description.is_empty() {
            text.push(' ');
            text.push_str(&k.description);
        }
        text.push_str(" Give a number, an interval such as [lo, hi], or say \"please estimate it\".");
        self.say(AgentName::KpiCollector, text);
    }

    fn collector_turn(&mut self, message: &str) {
        let agent = AgentName::KpiCollector;
        if let Some(kpi) = next_missing(self.s) {
            let value = match parse_value_utterance(message) {
                Err(_) => {
                    return self.say(
                        agent,
                        format!(
                            "I could not read a value for {} from \"{}\". Give a number, an interval such as [7, 9], \
                             or say \"please estimate it\".",
                            kpi.symbol,
                            message.trim()
                        ),
                    )
                }
                Ok(p) if p.kind == ParsedKind::Delegate => match self.estimate(&kpi) {
                    Some(v) => v,
                    None => return,
                },
                Ok(p) => match normalize_unit(&p, &kpi.unit) {
                    Ok(n) => KpiValue {
                        kpi_id: kpi.id.clone(),
                        value: n.quantity().expect("non-delegate value"),
                        unit: kpi.unit.clone(),
                        provenance: Provenance::UserProvided,
                        raw_text: message.trim().to_string(),
                    },
                    Err(e) => return self.say(agent, format!("{e}. Please give {} in {}.", kpi.symbol, kpi.unit)),
                },
            };
            self.s.collected.push(value);
        }

        let spec = self.wf.spec(agent);
        let out = match self.call(&spec, None) {
            Ok(out) => out,
            Err(e) => return self.agent_error(agent, &e),
        };
        self.say(agent, out.display_text);
        if !out.complete {
            return;
        }
        match next_missing(self.s) {
            None => {
                let artifact = json!({ "turns": self.s.transcript(agent), "values": self.s.collected });
                self.store(agent, KPI_COLLECTION_TRANSCRIPT.to_string(), artifact);
                self.advance();
                self.chain();
            }
            Some(k) => self.ask(&k),
        }
    }

    /// Asks the provider for a delegated value; it is stored as an assumption.
    fn estimate(&mut self, kpi: &Kpi) -> Option<KpiValue> {
        let agent = AgentName::KpiCollector;
        let prompt = Prompt {
            system: format!(
                "{}\n\nKPI {} ({}): {}. {}\nUnit: {}",
                estimate_prompt(),
                kpi.id,
                kpi.symbol,
                kpi.name,
                kpi.description,
                kpi.unit
            ),
            messages: vec![ChatMessage::user(format!("Estimate {} in {}.", kpi.symbol, kpi.unit))],
        };
        let mut turn = self.s.turn_of(agent.as_str());
        let reply = call_provider(self.provider, agent.as_str(), &mut turn, 0, Some(&kpi.id), &prompt);
        self.s.turns.insert(agent.as_str().to_string(), turn);
        let text = match reply {
            Ok(t) => t.trim().to_string(),
            Err(e) => {
                self.agent_error(agent, &AgentError::Provider(e));
                return None;
            }
        };
        let parsed = parse_value_utterance(&text)
            .ok()
            .filter(|p| p.kind != ParsedKind::Delegate)
            .and_then(|p| normalize_unit(&p, &kpi.unit).ok())
            .and_then(|p| p.quantity());
        match parsed {
            Some(value) => Some(KpiValue {
                kpi_id: kpi.id.clone(),
                value,
                unit: kpi.unit.clone(),
                provenance: Provenance::SystemDecided,
                raw_text: text,
            }),
            None => {
                self.fail(agent, "estimate", format!("estimate for {} is not a usable value: {text:?}", kpi.id), true);
                None
            }
        }
    }
}

/// Final result for one code from the calculus and the provider's reply.
fn settle(
    defn: &KviDefinition,
    computed: Result<KviResult, KviError>,
    reply: Result<AgentOutput, AgentError>,
    cot: bool,
) -> KviResult {
    let computed = match computed {
        Ok(r) => r,
        Err(e) => return KviResult::placeholder(defn, "compute-error", &e.to_string()),
    };
    let offered = reply
        .ok()
        .and_then(|o| o.artifact)
        .and_then(|v| serde_json::from_value::<KviResult>(v).ok());
    if cot {
        let mut r = computed;
        if let Some(p) = offered {
            let agrees = p.code == r.code
                && p.unit == r.unit
                && close(p.exact, r.exact)
                && close(p.min, r.min)
                && close(p.max, r.max);
            if agrees && verify_result(&p, defn).is_empty() && !p.rationale.trim().is_empty() {
                r.rationale = format!("{}\nNarrative: {}", r.rationale, p.rationale.trim());
            }
        }
        return r;
    }
    match offered {
        Some(mut p) => {
            p.flags = verify_result(&p, defn);
            if p.code != defn.code {
                p.flags.push("code-mismatch".to_string());
                p.code = defn.code.clone();
            }
            p
        }
        None => KviResult::placeholder(defn, "structured-output", "the calculator gave no usable result"),
    }
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{} {} @{}] {}", self.kind.as_str(), self.agent, self.stage, self.payload)
    }
}

impl Event {
    /// One server-sent-events frame: `event: <kind>` then a single `data:`
    /// line holding the JSON envelope.
    pub fn to_sse(&self, session_id: &str) -> String {
        let data = json!({
            "session_id": session_id,
            "agent": self.agent.as_str(),
            "stage": self.stage,
            "payload": self.payload,
        });
        format!("event: {}\ndata: {}\n\n", self.kind.as_str(), data)
    }
}

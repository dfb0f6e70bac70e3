use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AgentName, Role};
use crate::evidence::KpiValue;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryEntry {
    pub role: Role,
    pub agent: AgentName,
    pub text: String,
}

/// Everything the orchestrator knows about one conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub session_id: String,
    pub history: Vec<HistoryEntry>,
    pub current_agent: AgentName,
    pub stage_index: u8,
    /// Next code to compute during stage 8.
    pub kvi_cursor: usize,
    pub artifacts: IndexMap<String, Value>,
    /// Values gathered during stage 6, before the transcript is stored.
    #[serde(default)]
    pub collected: Vec<KpiValue>,
    /// Provider calls made so far, per agent.
    #[serde(default)]
    pub turns: BTreeMap<String, usize>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// New session at stage 1. A description becomes the first user message.
pub fn create_session(description: Option<&str>) -> SessionState {
    create_session_with_id(uuid::Uuid::new_v4().to_string(), description)
}

pub fn create_session_with_id(session_id: impl Into<String>, description: Option<&str>) -> SessionState {
    let now = now_ms();
    let mut history = Vec::new();
    if let Some(d) = description.map(str::trim).filter(|d| !d.is_empty()) {
        history.push(HistoryEntry { role: Role::User, agent: AgentName::Inspector, text: d.to_string() });
    }
    SessionState {
        session_id: session_id.into(),
        history,
        current_agent: AgentName::Inspector,
        stage_index: 1,
        kvi_cursor: 0,
        artifacts: IndexMap::new(),
        collected: Vec::new(),
        turns: BTreeMap::new(),
        created_at_ms: now,
        updated_at_ms: now,
    }
}

impl SessionState {
    /// `{role, text}` turns exchanged with one agent.
    pub fn transcript(&self, agent: AgentName) -> Value {
        Value::Array(
            self.history
                .iter()
                .filter(|h| h.agent == agent)
                .map(|h| serde_json::json!({"role": h.role, "text": h.text}))
                .collect(),
        )
    }

    pub fn turn_of(&self, agent: &str) -> usize {
        self.turns.get(agent).copied().unwrap_or(0)
    }

    /// Artifact keys written by the calculator, in storage order.
    pub fn kvi_result_keys(&self) -> Vec<&str> {
        self.artifacts
            .keys()
            .filter(|k| k.starts_with(crate::agents::spec::KVI_RESULT_PREFIX))
            .map(String::as_str)
            .collect()
    }
}

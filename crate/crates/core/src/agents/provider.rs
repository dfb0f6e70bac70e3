//! Text-completion backends: scripted playbooks, an HTTP chat-completions
//! client, and a recording wrapper.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// One provider call. `turn` counts calls to the same agent within a
/// session; `subject` names the KPI or KVI a call is about, when any.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub agent: String,
    pub turn: usize,
    pub attempt: u32,
    pub subject: Option<String>,
    pub system: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("playbook has no response for {agent} turn {turn}")]
    Exhausted { agent: String, turn: usize },
}

impl ProviderError {
    /// Whether resending the same request may succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status(s) => *s == 429 || *s >= 500,
            ProviderError::Malformed(_) | ProviderError::Exhausted { .. } => false,
        }
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
    fn label(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaybookEntry {
    pub agent: String,
    pub turn: usize,
    pub response: String,
    /// When set, the entry answers requests about this subject regardless
    /// of turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Playbook {
    pub entries: Vec<PlaybookEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaybookError {
    #[error("cannot read playbook {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed playbook: {0}")]
    Malformed(String),
    #[error("ambiguous playbook matcher: {0}")]
    Ambiguous(String),
}

impl Playbook {
    pub fn from_json(text: &str) -> Result<Playbook, PlaybookError> {
        let p: Playbook = serde_json::from_str(text).map_err(|e| PlaybookError::Malformed(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Playbook, PlaybookError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlaybookError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("playbook serializes")
    }

    pub fn validate(&self) -> Result<(), PlaybookError> {
        let mut turns = std::collections::HashSet::new();
        let mut subjects = std::collections::HashSet::new();
        for e in &self.entries {
            let fresh = match &e.subject {
                Some(s) => subjects.insert((e.agent.as_str(), s.as_str())),
                None => turns.insert((e.agent.as_str(), e.turn)),
            };
            if !fresh {
                return Err(PlaybookError::Ambiguous(match &e.subject {
                    Some(s) => format!("{} subject {s}", e.agent),
                    None => format!("{} turn {}", e.agent, e.turn),
                }));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exhaustion {
    Fail,
    /// Answer with the agent's highest-turn response.
    RepeatLast,
}

/// Deterministic provider answering from a [`Playbook`].
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    by_turn: HashMap<(String, usize), String>,
    by_subject: HashMap<(String, String), String>,
    last: HashMap<String, (usize, String)>,
    policy: Exhaustion,
}

impl ScriptedProvider {
    pub fn new(playbook: &Playbook, policy: Exhaustion) -> Result<Self, PlaybookError> {
        playbook.validate()?;
        let mut p = ScriptedProvider {
            by_turn: HashMap::new(),
            by_subject: HashMap::new(),
            last: HashMap::new(),
            policy,
        };
        for e in &playbook.entries {
            match &e.subject {
                Some(s) => {
                    p.by_subject.insert((e.agent.clone(), s.clone()), e.response.clone());
                }
                None => {
                    p.by_turn.insert((e.agent.clone(), e.turn), e.response.clone());
                    let slot = p.last.entry(e.agent.clone()).or_insert((e.turn, e.response.clone()));
                    if e.turn >= slot.0 {
                        *slot = (e.turn, e.response.clone());
                    }
                }
            }
        }
        Ok(p)
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        if let Some(subject) = &request.subject {
            if let Some(r) = self.by_subject.get(&(request.agent.clone(), subject.clone())) {
                return Ok(r.clone());
            }
        }
        if let Some(r) = self.by_turn.get(&(request.agent.clone(), request.turn)) {
            return Ok(r.clone());
        }
        match (self.policy, self.last.get(&request.agent)) {
            (Exhaustion::RepeatLast, Some((_, r))) => Ok(r.clone()),
            _ => Err(ProviderError::Exhausted { agent: request.agent.clone(), turn: request.turn }),
        }
    }

    fn label(&self) -> String {
        "scripted".to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads `KPI2KVI_PROVIDER_URL`, `KPI2KVI_PROVIDER_KEY` and `KPI2KVI_MODEL`.
    pub fn from_env() -> Result<HttpConfig, ProviderError> {
        let base_url = std::env::var("KPI2KVI_PROVIDER_URL")
            .map_err(|_| ProviderError::Transport("KPI2KVI_PROVIDER_URL is not set".into()))?;
        Ok(HttpConfig {
            base_url,
            api_key: std::env::var("KPI2KVI_PROVIDER_KEY").ok().filter(|k| !k.is_empty()),
            model: std::env::var("KPI2KVI_MODEL").unwrap_or_else(|_| "default".into()),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
}

/// Client for a chat-completions style endpoint.
pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(config.timeout)).build().into();
        HttpProvider { config, agent }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut messages = Vec::with_capacity(request.messages.len() + 1);
        messages.push(ChatMessage { role: Role::System, content: request.system.clone() });
        messages.extend(request.messages.iter().cloned());
        let body = serde_json::to_string(&WireRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
        })
        .map_err(|e| ProviderError::Malformed(e.to_string()))?;

        let mut req = self.agent.post(self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => ProviderError::Status(code),
            other => ProviderError::Transport(other.to_string()),
        })?;
        let text = resp.body_mut().read_to_string().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
    }

    fn label(&self) -> String {
        format!("http:{}", self.config.model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub request: CompletionRequest,
    pub response: Result<String, ProviderError>,
}

/// Wraps another provider and keeps every exchange for later replay.
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<Vec<RecordedCall>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.log.lock().unwrap().clone()
    }

    /// Successful exchanges as a playbook keyed by (agent, turn). A later
    /// attempt at the same turn overwrites an earlier one. Subjects are left
    /// out: requests that carry one fall back to turn routing, so a replay
    /// repeats the recorded call sequence, retries included.
    pub fn to_playbook(&self) -> Playbook {
        let mut entries: Vec<PlaybookEntry> = Vec::new();
        for call in self.log.lock().unwrap().iter() {
            let Ok(response) = &call.response else { continue };
            let agent = &call.request.agent;
            let turn = call.request.turn;
            match entries.iter_mut().find(|e| &e.agent == agent && e.turn == turn) {
                Some(e) => e.response = response.clone(),
                None => entries.push(PlaybookEntry {
                    agent: agent.clone(),
                    turn,
                    response: response.clone(),
                    subject: None,
                }),
            }
        }
        Playbook { entries }
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let response = self.inner.complete(request);
        tracing::debug!(agent = %request.agent, turn = request.turn, ok = response.is_ok(), "provider call");
        self.log.lock().unwrap().push(RecordedCall { request: request.clone(), response: response.clone() });
        response
    }

    fn label(&self) -> String {
        format!("recording({})", self.inner.label())
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

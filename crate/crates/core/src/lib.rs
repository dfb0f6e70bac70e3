//! Staged KPI-to-KVI assessment: taxonomy, interval calculus, evidence
//! tables, agents, orchestration and the evaluation harness.

pub mod agents;
pub mod calculus;
pub mod eval;
pub mod evidence;
pub mod orchestrator;
pub mod taxonomy;

pub use agents::{AgentName, Playbook, Provider, ProviderError, ScriptedProvider};
pub use calculus::{Interval, KviResult};
pub use evidence::{Kpi, KpiTable, KpiValue, Provenance};
pub use orchestrator::{Event, EventKind, SessionState, SessionStore, Workflow};
pub use taxonomy::{KviCategory, KviDefinition, Taxonomy};

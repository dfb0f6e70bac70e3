//! The nine stage contracts and the providers that execute them.

pub mod output;
pub mod provider;
pub mod spec;

pub use output::{
    call_provider, detect_completion, display_text, extract_json_block, parse_structured_output, run_agent,
    validate_structured, AgentError, AgentOutput, CategorySelection, KpiPlan, OutputError, Prompt,
};
pub use provider::{
    ChatMessage, CompletionRequest, Exhaustion, HttpConfig, HttpProvider, Playbook, PlaybookEntry, PlaybookError,
    Provider, ProviderError, RecordedCall, RecordingProvider, Role, ScriptedProvider,
};
pub use spec::{agent_spec, kvi_result_key, registry, AgentKind, AgentName, AgentSpec, SENTINEL};

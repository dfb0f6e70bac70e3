//! Session state machine, prompt assembly and persistence.

mod context;
mod engine;
mod session;
mod store;

pub use context::{advisor_context, build_context, definition_block};
pub use engine::{handle_user_turn, handle_user_turn_with, Event, EventKind, OrchestratorError, Workflow};
pub use session::{create_session, create_session_with_id, HistoryEntry, SessionState};
pub use store::{FileStore, MemoryStore, SessionStore, StoreError};

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::session::SessionState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("session file {path} is corrupt: {message}")]
    Integrity { path: String, message: String },
    #[error("session store I/O error at {path}: {message}")]
    Io { path: String, message: String },
}

pub trait SessionStore: Send + Sync {
    fn save(&self, session: &SessionState) -> Result<(), StoreError>;
    fn load(&self, session_id: &str) -> Result<SessionState, StoreError>;
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn encode(session: &SessionState) -> String {
    serde_json::to_string_pretty(session).expect("session serializes")
}

/// One `<id>.session.json` per session under a directory.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<FileStore, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(FileStore { dir })
    }

    /// Uses `KPI2KVI_STORE_DIR`, falling back to `./sessions`.
    pub fn from_env() -> Result<FileStore, StoreError> {
        Self::new(std::env::var("KPI2KVI_STORE_DIR").unwrap_or_else(|_| "sessions".into()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.session.json"))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

impl SessionStore for FileStore {
    fn save(&self, session: &SessionState) -> Result<(), StoreError> {
        if !valid_id(&session.session_id) {
            return Err(StoreError::Io { path: session.session_id.clone(), message: "invalid session id".into() });
        }
        let path = self.path_for(&session.session_id);
        let tmp = self.dir.join(format!(".{}.session.json.tmp", session.session_id));
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(encode(session).as_bytes()).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    fn load(&self, session_id: &str) -> Result<SessionState, StoreError> {
        if !valid_id(session_id) {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        let path = self.path_for(session_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(session_id.into())),
            Err(e) => return Err(io_err(&path, e)),
        };
        serde_json::from_str(&text)
            .map_err(|e| StoreError::Integrity { path: path.display().to_string(), message: e.to_string() })
    }
}

/// In-process store holding the same serialized form as [`FileStore`].
#[derive(Debug, Default)]
pub struct MemoryStore {
    docs: Mutex<HashMap<String, String>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn save(&self, session: &SessionState) -> Result<(), StoreError> {
        self.docs.lock().unwrap().insert(session.session_id.clone(), encode(session));
        Ok(())
    }

    fn load(&self, session_id: &str) -> Result<SessionState, StoreError> {
        let docs = self.docs.lock().unwrap();
        let text = docs.get(session_id).ok_or_else(|| StoreError::NotFound(session_id.to_string()))?;
        serde_json::from_str(text)
            .map_err(|e| StoreError::Integrity { path: format!("memory:{session_id}"), message: e.to_string() })
    }
}

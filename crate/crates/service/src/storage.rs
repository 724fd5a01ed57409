//! Engine state persistence.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use redress_core::EngineState;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot {path} is corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("snapshot {path} has a broken audit chain at seq {seq}")]
    ChainBroken { path: PathBuf, seq: u64 },
}

/// A place engine state survives restarts.
pub trait Storage: Send + Sync {
    /// The last saved state, if any.
    fn load(&self) -> Result<Option<EngineState>, StorageError>;
    fn save(&self, state: &EngineState) -> Result<(), StorageError>;
}

/// Keeps the last saved state in memory. Used when no persistence path is
/// configured, and by tests.
#[derive(Debug, Default)]
pub struct MemoryStore {
    snapshot: Mutex<Option<String>>,
}

impl Storage for MemoryStore {
    fn load(&self) -> Result<Option<EngineState>, StorageError> {
        let guard = self.snapshot.lock().expect("memory store poisoned");
        match guard.as_deref() {
            None => Ok(None),
            Some(text) => decode(Path::new("<memory>"), text).map(Some),
        }
    }

    fn save(&self, state: &EngineState) -> Result<(), StorageError> {
        let text = serde_json::to_string(state).expect("state serializes");
        *self.snapshot.lock().expect("memory store poisoned") = Some(text);
        Ok(())
    }
}

/// One JSON snapshot file, replaced atomically on every save.
#[derive(Debug, Clone)]
pub struct FileSnapshotStore {
    path: PathBuf,
}

impl FileSnapshotStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: std::io::Error) -> StorageError {
        StorageError::Io {
            path: self.path.clone(),
            source,
        }
    }
}

impl Storage for FileSnapshotStore {
    fn load(&self) -> Result<Option<EngineState>, StorageError> {
        match fs::read_to_string(&self.path) {
            Ok(text) => decode(&self.path, &text).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(self.io(e)),
        }
    }

    fn save(&self, state: &EngineState) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec(state).expect("state serializes");
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| self.io(e))?;
        }
        let mut tmp = self.path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let mut f = File::create(&tmp).map_err(|e| self.io(e))?;
        f.write_all(&bytes).map_err(|e| self.io(e))?;
        f.sync_all().map_err(|e| self.io(e))?;
        drop(f);
        fs::rename(&tmp, &self.path).map_err(|e| self.io(e))?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }
}

fn decode(path: &Path, text: &str) -> Result<EngineState, StorageError> {
    let state: EngineState = serde_json::from_str(text).map_err(|e| StorageError::Corrupt {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let check = state.audit.verify();
    if let Some(seq) = check.first_broken {
        return Err(StorageError::ChainBroken {
            path: path.to_owned(),
            seq,
        });
    }
    Ok(state)
}

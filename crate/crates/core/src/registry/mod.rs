//! Mention records, their lifecycle state machine, and the replayable
//! event log behind the dashboard queues.

mod policy;
mod record;
mod store;

use std::path::Path;

pub use policy::{recipients_for, PolicyError, SendPolicy};
pub use record::{
    Author, LogEntry, MalformedPid, MentionDraft, MentionKey, MentionRecord, MentionState,
    PersistentIdentifier, ResponseKind, SwhObjectType,
};
pub use store::{next_state, CorruptLog, LogLine, Registry, RegistryError, RegistryEvent, Tally};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("corpus {path} is not a valid draft list: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

/// Reads a JSON array of mention drafts.
pub fn load_corpus(path: &Path) -> Result<Vec<MentionDraft>, CorpusError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Read {
        path: display.clone(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| CorpusError::Parse {
        path: display,
        source,
    })
}

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::notify::{MentionDescriptor, NotificationId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Author {
    pub name: String,
    pub email: String,
}

impl Author {
    pub fn new(name: impl Into<String>, email: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            email: email.into(),
        }
    }
}

/// A mention as produced by extraction, before it enters the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionDraft {
    pub oai_id: String,
    pub paper_title: String,
    pub authors: Vec<Author>,
    pub descriptor: MentionDescriptor,
}

impl MentionDraft {
    pub fn key(&self) -> MentionKey {
        MentionKey::derive(
            &self.oai_id,
            &self.descriptor.citation.name,
            &self.descriptor.context,
        )
    }
}

/// Stable record key: 16 hex chars of SHA-256 over the duplicate-detection
/// triple (oai id, software name, mention context).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MentionKey(String);

impl MentionKey {
    pub fn derive(oai_id: &str, software_name: &str, context: &str) -> Self {
        let mut h = Sha256::new();
        for part in [oai_id, software_name, context] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Self(hex::encode(&h.finalize()[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MentionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MentionKey {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionState {
    Ready,
    Sent,
    Responded,
    Announced,
    Cancelled,
}

impl MentionState {
    pub const ALL: [MentionState; 5] = [
        MentionState::Ready,
        MentionState::Sent,
        MentionState::Responded,
        MentionState::Announced,
        MentionState::Cancelled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MentionState::Ready => "ready",
            MentionState::Sent => "sent",
            MentionState::Responded => "responded",
            MentionState::Announced => "announced",
            MentionState::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for MentionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Validated,
    Edited,
    Rejected,
}

impl ResponseKind {
    pub const ALL: [ResponseKind; 3] = [
        ResponseKind::Validated,
        ResponseKind::Edited,
        ResponseKind::Rejected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKind::Validated => "validated",
            ResponseKind::Edited => "edited",
            ResponseKind::Rejected => "rejected",
        }
    }

    pub fn is_positive(self) -> bool {
        !matches!(self, ResponseKind::Rejected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwhObjectType {
    Dir,
    Rev,
    Snp,
}

impl SwhObjectType {
    fn as_str(self) -> &'static str {
        match self {
            SwhObjectType::Dir => "dir",
            SwhObjectType::Rev => "rev",
            SwhObjectType::Snp => "snp",
        }
    }
}

/// Archive-minted identifier, rendered `swh:1:<type>:<40 hex>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PersistentIdentifier {
    object_type: SwhObjectType,
    hash_hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed persistent identifier: {0:?}")]
pub struct MalformedPid(pub String);

impl PersistentIdentifier {
    pub const SCHEME: &'static str = "swh";
    pub const VERSION: u32 = 1;

    pub fn new(object_type: SwhObjectType, digest: [u8; 20]) -> Self {
        Self {
            object_type,
            hash_hex: hex::encode(digest),
        }
    }

    pub fn object_type(&self) -> SwhObjectType {
        self.object_type
    }

    pub fn hash_hex(&self) -> &str {
        &self.hash_hex
    }
}

impl fmt::Display for PersistentIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            Self::SCHEME,
            Self::VERSION,
            self.object_type.as_str(),
            self.hash_hex
        )
    }
}

impl FromStr for PersistentIdentifier {
    type Err = MalformedPid;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MalformedPid(s.to_string());
        let mut parts = s.split(':');
        let (Some("swh"), Some("1"), Some(kind), Some(hash), None) = (
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
        ) else {
            return Err(err());
        };
        let object_type = match kind {
            "dir" => SwhObjectType::Dir,
            "rev" => SwhObjectType::Rev,
            "snp" => SwhObjectType::Snp,
            _ => return Err(err()),
        };
        let hex_ok = hash.len() == 40
            && hash
                .chars()
                .all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c));
        if !hex_ok {
            return Err(err());
        }
        Ok(Self {
            object_type,
            hash_hex: hash.to_string(),
        })
    }
}

impl Serialize for PersistentIdentifier {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PersistentIdentifier {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts: DateTime<Utc>,
    pub event: String,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub key: MentionKey,
    pub oai_id: String,
    pub paper_title: String,
    pub authors: Vec<Author>,
    pub descriptor: MentionDescriptor,
    pub state: MentionState,
    pub response_kind: Option<ResponseKind>,
    pub offer_id: Option<NotificationId>,
    pub pid: Option<PersistentIdentifier>,
    pub event_log: Vec<LogEntry>,
    /// Journal position of the event that put the record in its state.
    #[serde(skip)]
    pub(crate) state_seq: usize,
}

impl MentionRecord {
    pub(crate) fn from_draft(draft: MentionDraft) -> Self {
        Self {
            key: draft.key(),
            oai_id: draft.oai_id,
            paper_title: draft.paper_title,
            authors: draft.authors,
            descriptor: draft.descriptor,
            state: MentionState::Ready,
            response_kind: None,
            offer_id: None,
            pid: None,
            event_log: Vec::new(),
            state_seq: 0,
        }
    }

    pub fn state_seq(&self) -> usize {
        self.state_seq
    }

    pub fn authors_display(&self) -> String {
        self.authors
            .iter()
            .map(|a| a.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Checks the record-level invariants tying state to its attributes.
    pub fn invariant_violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.state == MentionState::Sent && self.offer_id.is_none() {
            out.push("sent without offer id");
        }
        if self.state == MentionState::Responded && self.response_kind.is_none() {
            out.push("responded without response kind");
        }
        if self.state == MentionState::Announced
            && !matches!(self.response_kind, Some(k) if k.is_positive())
        {
            out.push("announced without a positive response");
        }
        if self.pid.is_some() && self.state != MentionState::Announced {
            out.push("pid on a record that is not announced");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pid_round_trips_through_text() {
        let pid = PersistentIdentifier::new(SwhObjectType::Dir, [0xab; 20]);
        let text = pid.to_string();
        assert_eq!(text, format!("swh:1:dir:{}", "ab".repeat(20)));
        assert_eq!(text.parse::<PersistentIdentifier>().unwrap(), pid);
    }

    #[test]
    fn malformed_pids() {
        for bad in [
            "swh:1:dir:abc",
            "swh:2:dir:0000000000000000000000000000000000000000",
            "swh:1:cnt:0000000000000000000000000000000000000000",
            "swh:1:dir:000000000000000000000000000000000000000G",
            "swh:1:dir:0000000000000000000000000000000000000000:x",
        ] {
            assert!(bad.parse::<PersistentIdentifier>().is_err(), "{bad}");
        }
    }

    #[test]
    fn keys_separate_the_triple() {
        assert_ne!(
            MentionKey::derive("a", "bc", "d"),
            MentionKey::derive("ab", "c", "d")
        );
        assert_eq!(MentionKey::derive("a", "b", "c").as_str().len(), 16);
    }
}

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use uuid::Uuid;

const URN_PREFIX: &str = "urn:uuid:";

/// Notification identifier rendered as `urn:uuid:<lowercase hyphenated uuid>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NotificationId(Uuid);

impl NotificationId {
    pub fn from_uuid(uuid: Uuid) -> Self {
        Self(uuid)
    }

    pub fn uuid(&self) -> Uuid {
        self.0
    }

    /// The bare hyphenated uuid, without the urn prefix.
    pub fn simple(&self) -> String {
        self.0.hyphenated().to_string()
    }
}

impl fmt::Display for NotificationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{URN_PREFIX}{}", self.0.hyphenated())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed URN-UUID: {0:?}")]
pub struct MalformedUrn(pub String);

impl FromStr for NotificationId {
    type Err = MalformedUrn;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MalformedUrn(s.to_string());
        let body = s.strip_prefix(URN_PREFIX).ok_or_else(err)?;
        if body.len() != 36 {
            return Err(err());
        }
        let layout_ok = body.char_indices().all(|(i, c)| match i {
            8 | 13 | 18 | 23 => c == '-',
            _ => c.is_ascii_digit() || ('a'..='f').contains(&c),
        });
        if !layout_ok {
            return Err(err());
        }
        Uuid::parse_str(body).map(Self).map_err(|_| err())
    }
}

impl Serialize for NotificationId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NotificationId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of fresh notification ids.
pub trait IdSource: Send {
    fn next_id(&mut self) -> NotificationId;
}

/// Random v4 uuids from the thread rng.
#[derive(Debug, Default)]
pub struct RandomIds;

impl IdSource for RandomIds {
    fn next_id(&mut self) -> NotificationId {
        NotificationId(Uuid::new_v4())
    }
}

/// Reproducible v4 uuids drawn from a seeded ChaCha stream.
#[derive(Debug)]
pub struct SeededIds(ChaCha8Rng);

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl IdSource for SeededIds {
    fn next_id(&mut self) -> NotificationId {
        let mut bytes = [0u8; 16];
        self.0.fill_bytes(&mut bytes);
        NotificationId(uuid::Builder::from_random_bytes(bytes).into_uuid())
    }
}

/// Hands out a fixed list of ids, then falls back to a seeded stream.
#[derive(Debug)]
pub struct FixedIds {
    queue: VecDeque<NotificationId>,
    fallback: SeededIds,
}

impl FixedIds {
    pub fn new(ids: impl IntoIterator<Item = NotificationId>) -> Self {
        Self {
            queue: ids.into_iter().collect(),
            fallback: SeededIds::new(0),
        }
    }
}

impl IdSource for FixedIds {
    fn next_id(&mut self) -> NotificationId {
        self.queue
            .pop_front()
            .unwrap_or_else(|| self.fallback.next_id())
    }
}

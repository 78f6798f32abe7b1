use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::policy::{sending_order, SendPolicy};
use super::record::{
    LogEntry, MentionDraft, MentionKey, MentionRecord, MentionState, PersistentIdentifier,
    ResponseKind,
};
use crate::clock::Clock;
use crate::notify::{MentionDescriptor, NotificationId};

/// Events that move a record through its lifecycle.
#[derive(Debug, Clone, PartialEq)]
pub enum RegistryEvent {
    OfferSent(NotificationId),
    ResponseReceived {
        kind: ResponseKind,
        /// Author-edited descriptor; replaces the stored one.
        edited: Option<MentionDescriptor>,
    },
    Announced(Option<PersistentIdentifier>),
    ManagerCancelled,
}

impl RegistryEvent {
    pub fn name(&self) -> &'static str {
        match self {
            RegistryEvent::OfferSent(_) => "offer_sent",
            RegistryEvent::ResponseReceived { .. } => "response_received",
            RegistryEvent::Announced(_) => "announced",
            RegistryEvent::ManagerCancelled => "cancelled",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown record {0}")]
    UnknownRecord(MentionKey),
    #[error("no {event} transition from state {state}")]
    IllegalTransition {
        state: MentionState,
        event: &'static str,
    },
    #[error("draft {index} is invalid: {reason}")]
    InvalidDraft { index: usize, reason: String },
    #[error("cannot assign a pid to a record in state {0}")]
    PidNotAllowed(MentionState),
    #[error("registry log corrupt at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("registry log i/o: {0}")]
    Io(#[from] io::Error),
}

/// One line of the persisted registry log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub ts: DateTime<Utc>,
    pub record_key: MentionKey,
    pub event: String,
    pub detail: Value,
}

/// Replay stopped early; everything before `line` was applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptLog {
    pub line: usize,
    pub reason: String,
}

/// Per-state record counts; every state is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tally(BTreeMap<MentionState, usize>);

impl Tally {
    fn empty() -> Self {
        Self(MentionState::ALL.iter().map(|s| (*s, 0)).collect())
    }

    pub fn get(&self, state: MentionState) -> usize {
        self.0[&state]
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MentionState, usize)> + '_ {
        self.0.iter().map(|(s, n)| (*s, *n))
    }
}

enum Change {
    Ingest(Box<MentionDraft>),
    Transition(RegistryEvent),
    AssignPid(PersistentIdentifier),
}

#[derive(Default)]
struct Inner {
    records: Vec<MentionRecord>,
    index: HashMap<MentionKey, usize>,
    by_offer: HashMap<NotificationId, usize>,
    journal: Vec<LogLine>,
    sink: Option<File>,
}

/// Mention storage and lifecycle state machine, backed by an append-only
/// newline-delimited event log.
///
/// All mutations take the write lock, so transitions on a record are
/// serialized; readers get consistent snapshots.
pub struct Registry {
    inner: RwLock<Inner>,
    clock: Arc<dyn Clock>,
}

impl Registry {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            clock,
        }
    }

    /// Replays `path` (if it exists) and appends every later change to it.
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, RegistryError> {
        let registry = if path.exists() {
            Self::restore(path, clock)?
        } else {
            Self::new(clock)
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        registry.inner.write().sink = Some(file);
        Ok(registry)
    }

    /// Strict replay into an in-memory registry.
    pub fn restore(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, RegistryError> {
        let (registry, corrupt) = Self::recover(path, clock)?;
        match corrupt {
            None => Ok(registry),
            Some(c) => Err(RegistryError::CorruptLog {
                line: c.line,
                reason: c.reason,
            }),
        }
    }

    /// Replays up to the last valid line, reporting where it stopped.
    pub fn recover(
        path: &Path,
        clock: Arc<dyn Clock>,
    ) -> Result<(Self, Option<CorruptLog>), RegistryError> {
        let registry = Self::new(clock);
        let reader = BufReader::new(File::open(path)?);
        let mut corrupt = None;
        {
            let mut inner = registry.inner.write();
            for (i, line) in reader.split(b'\n').enumerate() {
                let line_no = i + 1;
                let raw = line?;
                let outcome = std::str::from_utf8(&raw)
                    .map_err(|e| e.to_string())
                    .and_then(|s| serde_json::from_str::<LogLine>(s).map_err(|e| e.to_string()))
                    .and_then(|l| decode(&l).map(|c| (l, c)));
                let (log_line, change) = match outcome {
                    Ok(v) => v,
                    Err(reason) => {
                        corrupt = Some(CorruptLog {
                            line: line_no,
                            reason,
                        });
                        break;
                    }
                };
                if let Err(e) = inner.apply(log_line, change) {
                    corrupt = Some(CorruptLog {
                        line: line_no,
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
        Ok((registry, corrupt))
    }

    /// Writes the full journal to `path`.
    pub fn persist(&self, path: &Path) -> Result<(), RegistryError> {
        let inner = self.inner.read();
        let mut out = io::BufWriter::new(File::create(path)?);
        for line in &inner.journal {
            serde_json::to_writer(&mut out, line).map_err(io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Stores new drafts as Ready records. Duplicates of an existing
    /// (oai id, software name, context) triple are skipped. Nothing is
    /// stored if any draft is invalid.
    pub fn ingest(&self, drafts: &[MentionDraft]) -> Result<usize, RegistryError> {
        for (index, draft) in drafts.iter().enumerate() {
            validate_draft(draft)
                .map_err(|reason| RegistryError::InvalidDraft { index, reason })?;
        }
        let mut inner = self.inner.write();
        let mut count = 0;
        for draft in drafts {
            let key = draft.key();
            if inner.index.contains_key(&key) {
                continue;
            }
            let line = LogLine {
                ts: self.clock.now(),
                record_key: key,
                event: "ingested".into(),
                detail: serde_json::to_value(draft).expect("draft serializes"),
            };
            inner.commit(line, Change::Ingest(Box::new(draft.clone())))?;
            count += 1;
        }
        Ok(count)
    }

    pub fn transition(
        &self,
        key: &MentionKey,
        event: RegistryEvent,
    ) -> Result<MentionState, RegistryError> {
        let mut inner = self.inner.write();
        let line = LogLine {
            ts: self.clock.now(),
            record_key: key.clone(),
            event: event.name().into(),
            detail: event_detail(&event),
        };
        inner.commit(line, Change::Transition(event))?;
        Ok(inner.record(key)?.state)
    }

    /// Attaches an archive pid to an Announced record that has none yet.
    pub fn assign_pid(
        &self,
        key: &MentionKey,
        pid: PersistentIdentifier,
    ) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        let line = LogLine {
            ts: self.clock.now(),
            record_key: key.clone(),
            event: "pid_assigned".into(),
            detail: json!({ "pid": pid.to_string() }),
        };
        inner.commit(line, Change::AssignPid(pid))
    }

    pub fn get(&self, key: &MentionKey) -> Option<MentionRecord> {
        let inner = self.inner.read();
        inner.index.get(key).map(|&i| inner.records[i].clone())
    }

    pub fn find_by_offer(&self, offer: &NotificationId) -> Option<MentionRecord> {
        let inner = self.inner.read();
        inner.by_offer.get(offer).map(|&i| inner.records[i].clone())
    }

    /// All records in ingest order.
    pub fn records(&self) -> Vec<MentionRecord> {
        self.inner.read().records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn journal(&self) -> Vec<LogLine> {
        self.inner.read().journal.clone()
    }

    pub fn journal_len(&self) -> usize {
        self.inner.read().journal.len()
    }

    /// Ready records the policy admits, highest confidence first.
    pub fn select_for_sending(&self, policy: &SendPolicy) -> Vec<MentionRecord> {
        let inner = self.inner.read();
        let mut out: Vec<MentionRecord> = inner
            .records
            .iter()
            .filter(|r| {
                r.state == MentionState::Ready && policy.admits(r.descriptor.confidence.value())
            })
            .cloned()
            .collect();
        out.sort_by(sending_order);
        out
    }

    pub fn tally_by_state(&self) -> Tally {
        let inner = self.inner.read();
        let mut tally = Tally::empty();
        for r in &inner.records {
            *tally.0.get_mut(&r.state).expect("all states present") += 1;
        }
        tally
    }
}

impl Inner {
    fn record(&self, key: &MentionKey) -> Result<&MentionRecord, RegistryError> {
        self.index
            .get(key)
            .map(|&i| &self.records[i])
            .ok_or_else(|| RegistryError::UnknownRecord(key.clone()))
    }

    /// Checks, writes to the sink, then applies. A failed write leaves
    /// memory untouched.
    fn commit(&mut self, line: LogLine, change: Change) -> Result<(), RegistryError> {
        self.check(&line.record_key, &change)?;
        if let Some(sink) = self.sink.as_mut() {
            let mut bytes = serde_json::to_vec(&line).map_err(io::Error::other)?;
            bytes.push(b'\n');
            sink.write_all(&bytes)?;
            sink.flush()?;
        }
        self.apply(line, change)
    }

    fn check(&self, key: &MentionKey, change: &Change) -> Result<(), RegistryError> {
        match change {
            Change::Ingest(_) => Ok(()),
            Change::Transition(event) => {
                let r = self.record(key)?;
                next_state(r.state, r.response_kind, event)
                    .map(|_| ())
                    .ok_or(RegistryError::IllegalTransition {
                        state: r.state,
                        event: event.name(),
                    })
            }
            Change::AssignPid(_) => {
                let r = self.record(key)?;
                if r.state == MentionState::Announced && r.pid.is_none() {
                    Ok(())
                } else {
                    Err(RegistryError::PidNotAllowed(r.state))
                }
            }
        }
    }

    fn apply(&mut self, line: LogLine, change: Change) -> Result<(), RegistryError> {
        let seq = self.journal.len();
        let entry = LogEntry {
            ts: line.ts,
            event: line.event.clone(),
            detail: line.detail.clone(),
        };
        match change {
            Change::Ingest(draft) => {
                if self.index.contains_key(&line.record_key) {
                    return Err(RegistryError::InvalidDraft {
                        index: seq,
                        reason: format!("duplicate record {}", line.record_key),
                    });
                }
                let mut record = MentionRecord::from_draft(*draft);
                record.key = line.record_key.clone();
                record.event_log.push(entry);
                record.state_seq = seq;
                self.index
                    .insert(line.record_key.clone(), self.records.len());
                self.records.push(record);
            }
            Change::Transition(event) => {
                self.check(&line.record_key, &Change::Transition(event.clone()))?;
                let i = self.index[&line.record_key];
                let record = &mut self.records[i];
                let next =
                    next_state(record.state, record.response_kind, &event).expect("checked above");
                match event {
                    RegistryEvent::OfferSent(id) => {
                        record.offer_id = Some(id);
                        self.by_offer.insert(id, i);
                    }
                    RegistryEvent::ResponseReceived { kind, edited } => {
                        record.response_kind = Some(kind);
                        if let Some(d) = edited {
                            record.descriptor = d;
                        }
                    }
                    RegistryEvent::Announced(pid) => record.pid = pid,
                    RegistryEvent::ManagerCancelled => {}
                }
                record.state = next;
                record.state_seq = seq;
                record.event_log.push(entry);
            }
            Change::AssignPid(pid) => {
                self.check(&line.record_key, &Change::AssignPid(pid.clone()))?;
                let i = self.index[&line.record_key];
                self.records[i].pid = Some(pid);
                self.records[i].event_log.push(entry);
            }
        }
        self.journal.push(line);
        Ok(())
    }
}

/// The lifecycle table. `None` means the event is illegal in that state.
pub fn next_state(
    state: MentionState,
    response: Option<ResponseKind>,
    event: &RegistryEvent,
) -> Option<MentionState> {
    use MentionState::*;
    match (state, event) {
        (Ready, RegistryEvent::OfferSent(_)) => Some(Sent),
        (Ready | Sent, RegistryEvent::ManagerCancelled) => Some(Cancelled),
        (Sent, RegistryEvent::ResponseReceived { .. }) => Some(Responded),
        (Responded, RegistryEvent::Announced(_)) if matches!(response, Some(k) if k.is_positive()) => {
            Some(Announced)
        }
        _ => None,
    }
}

fn validate_draft(draft: &MentionDraft) -> Result<(), String> {
    if draft.oai_id.trim().is_empty() {
        return Err("oai_id is empty".into());
    }
    if draft.authors.is_empty() {
        return Err("no authors".into());
    }
    draft.descriptor.validate().map_err(|r| r.to_string())
}

fn event_detail(event: &RegistryEvent) -> Value {
    match event {
        RegistryEvent::OfferSent(id) => json!({ "offer_id": id.to_string() }),
        RegistryEvent::ResponseReceived { kind, edited } => json!({
            "kind": kind.as_str(),
            "edited": edited,
        }),
        RegistryEvent::Announced(pid) => json!({ "pid": pid.as_ref().map(|p| p.to_string()) }),
        RegistryEvent::ManagerCancelled => json!({}),
    }
}

fn decode(line: &LogLine) -> Result<Change, String> {
    let d = &line.detail;
    let field = |name: &str| d.get(name).cloned().unwrap_or(Value::Null);
    let parse = |v: Value| -> Result<Option<PersistentIdentifier>, String> {
        serde_json::from_value(v).map_err(|e| e.to_string())
    };
    Ok(match line.event.as_str() {
        "ingested" => Change::Ingest(Box::new(
            serde_json::from_value(d.clone()).map_err(|e| format!("ingested detail: {e}"))?,
        )),
        "offer_sent" => Change::Transition(RegistryEvent::OfferSent(
            serde_json::from_value(field("offer_id")).map_err(|e| format!("offer_id: {e}"))?,
        )),
        "response_received" => Change::Transition(RegistryEvent::ResponseReceived {
            kind: serde_json::from_value(field("kind")).map_err(|e| format!("kind: {e}"))?,
            edited: serde_json::from_value(field("edited")).map_err(|e| format!("edited: {e}"))?,
        }),
        "announced" => Change::Transition(RegistryEvent::Announced(parse(field("pid"))?)),
        "cancelled" => Change::Transition(RegistryEvent::ManagerCancelled),
        "pid_assigned" => Change::AssignPid(
            parse(field("pid"))?.ok_or_else(|| "pid_assigned without pid".to_string())?,
        ),
        other => return Err(format!("unknown event {other:?}")),
    })
}

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use url::Url;

use crate::clock::Clock;
use crate::notify::{parse_payload, NotificationPayload, ValidationReport, MEDIA_TYPE};

use super::INBOX_REL;

const LDP_CONTEXT: &str = "http://www.w3.org/ns/ldp";

#[derive(Debug, Clone, PartialEq)]
pub struct InboxEntry {
    pub entry_iri: String,
    pub received_at: DateTime<Utc>,
    pub payload: NotificationPayload,
    pub raw_bytes: Vec<u8>,
}

/// Called once per distinct notification, after the entry is on disk.
#[async_trait]
pub trait InboxConsumer: Send + Sync {
    async fn consume(&self, entry: &InboxEntry);
}

/// Consumer that does nothing; for inboxes that only collect.
pub struct Collect;

#[async_trait]
impl InboxConsumer for Collect {
    async fn consume(&self, _entry: &InboxEntry) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Receipt {
    Created(String),
    Duplicate(String),
}

impl Receipt {
    pub fn location(&self) -> &str {
        match self {
            Receipt::Created(l) | Receipt::Duplicate(l) => l,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReceiveError {
    #[error("unsupported media type {0:?}")]
    UnsupportedMediaType(Option<String>),
    #[error("invalid notification: {0}")]
    Invalid(ValidationReport),
    #[error("inbox storage: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum InboxOpenError {
    #[error("inbox store {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("inbox store {path} line {line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Serialize, Deserialize)]
struct StoredLine {
    entry: String,
    received_at: DateTime<Utc>,
    raw: String,
}

struct Entries {
    list: Vec<InboxEntry>,
    by_entry: HashMap<String, usize>,
    sink: Option<File>,
}

/// An LDN inbox: receipt-ordered, deduplicated by notification id.
pub struct Inbox {
    url: Url,
    clock: Arc<dyn Clock>,
    entries: Mutex<Entries>,
}

impl Inbox {
    /// In-memory inbox at `url`, which must end with a slash.
    pub fn new(url: Url, clock: Arc<dyn Clock>) -> Self {
        Self {
            url,
            clock,
            entries: Mutex::new(Entries {
                list: Vec::new(),
                by_entry: HashMap::new(),
                sink: None,
            }),
        }
    }

    /// Inbox backed by an append-only file; existing entries are reloaded.
    pub fn open(url: Url, path: &Path, clock: Arc<dyn Clock>) -> Result<Self, InboxOpenError> {
        let shown = path.display().to_string();
        let io = |source| InboxOpenError::Io {
            path: shown.clone(),
            source,
        };
        let inbox = Self::new(url, clock);
        {
            let mut entries = inbox.entries.lock();
            if path.exists() {
                let reader = BufReader::new(File::open(path).map_err(io)?);
                for (i, line) in reader.lines().enumerate() {
                    let line = line.map_err(io)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let corrupt = |reason: String| InboxOpenError::Corrupt {
                        path: shown.clone(),
                        line: i + 1,
                        reason,
                    };
                    let stored: StoredLine =
                        serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                    let payload =
                        parse_payload(stored.raw.as_bytes()).map_err(|r| corrupt(r.to_string()))?;
                    let entry = InboxEntry {
                        entry_iri: inbox.entry_iri(&stored.entry),
                        received_at: stored.received_at,
                        payload,
                        raw_bytes: stored.raw.into_bytes(),
                    };
                    let n = entries.list.len();
                    entries.by_entry.insert(stored.entry, n);
                    entries.list.push(entry);
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io)?;
            entries.sink = Some(file);
        }
        Ok(inbox)
    }

    pub fn url(&self) -> &Url {
        &self.url
    }

    fn entry_iri(&self, entry: &str) -> String {
        self.url
            .join(entry)
            .map(String::from)
            .unwrap_or_else(|_| format!("{}{entry}", self.url))
    }

    /// Stores a notification unless one with the same id is already held.
    /// Returns the entry that a consumer should see, if it is new.
    pub fn accept(
        &self,
        content_type: Option<&str>,
        body: &[u8],
    ) -> Result<(Receipt, Option<InboxEntry>), ReceiveError> {
        if !content_type.is_some_and(is_ld_json) {
            return Err(ReceiveError::UnsupportedMediaType(
                content_type.map(str::to_string),
            ));
        }
        let payload = parse_payload(body).map_err(ReceiveError::Invalid)?;
        let entry_name = payload.id.simple();

        let mut entries = self.entries.lock();
        if let Some(&i) = entries.by_entry.get(&entry_name) {
            return Ok((Receipt::Duplicate(entries.list[i].entry_iri.clone()), None));
        }
        let entry = InboxEntry {
            entry_iri: self.entry_iri(&entry_name),
            received_at: self.clock.now(),
            payload,
            raw_bytes: body.to_vec(),
        };
        if let Some(sink) = entries.sink.as_mut() {
            let line = StoredLine {
                entry: entry_name.clone(),
                received_at: entry.received_at,
                raw: String::from_utf8_lossy(body).into_owned(),
            };
            let mut text = serde_json::to_string(&line).expect("inbox line serializes");
            text.push('\n');
            sink.write_all(text.as_bytes())?;
            sink.flush()?;
        }
        let n = entries.list.len();
        entries.by_entry.insert(entry_name, n);
        entries.list.push(entry.clone());
        Ok((Receipt::Created(entry.entry_iri.clone()), Some(entry)))
    }

    pub fn entries(&self) -> Vec<InboxEntry> {
        self.entries.lock().list.clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, entry: &str) -> Option<InboxEntry> {
        let entries = self.entries.lock();
        entries
            .by_entry
            .get(entry)
            .map(|&i| entries.list[i].clone())
    }

    pub fn contains_listing(&self) -> serde_json::Value {
        let iris: Vec<String> = self
            .entries
            .lock()
            .list
            .iter()
            .map(|e| e.entry_iri.clone())
            .collect();
        serde_json::json!({
            "@context": LDP_CONTEXT,
            "@id": self.url.as_str(),
            "contains": iris,
        })
    }
}

fn is_ld_json(content_type: &str) -> bool {
    content_type
        .split(';')
        .next()
        .is_some_and(|m| m.trim().eq_ignore_ascii_case(MEDIA_TYPE))
}

#[derive(Clone)]
struct InboxState {
    inbox: Arc<Inbox>,
    consumer: Arc<dyn InboxConsumer>,
}

/// Routes for the inbox (POST/GET on its path, GET per entry) and the
/// discovery header on the service root.
pub fn inbox_router(inbox: Arc<Inbox>, consumer: Arc<dyn InboxConsumer>) -> Router {
    let path = inbox.url().path().trim_end_matches('/').to_string();
    let path = if path.is_empty() {
        "/inbox".to_string()
    } else {
        path
    };
    let state = InboxState { inbox, consumer };
    Router::new()
        .route("/", get(discovery))
        .route(&path, get(list).post(receive))
        .route(&format!("{path}/"), get(list).post(receive))
        .route(&format!("{path}/{{entry}}"), get(entry))
        .with_state(state)
}

async fn discovery(State(s): State<InboxState>) -> Response {
    let link = format!("<{}>; rel=\"{INBOX_REL}\"", s.inbox.url());
    let mut resp = StatusCode::OK.into_response();
    if let Ok(v) = HeaderValue::from_str(&link) {
        resp.headers_mut().insert(header::LINK, v);
    }
    resp
}

async fn receive(State(s): State<InboxState>, headers: HeaderMap, body: Bytes) -> Response {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok());
    match s.inbox.accept(content_type, &body) {
        Ok((receipt, fresh)) => {
            if let Some(entry) = fresh {
                s.consumer.consume(&entry).await;
            }
            let mut resp = StatusCode::CREATED.into_response();
            if let Ok(v) = HeaderValue::from_str(receipt.location()) {
                resp.headers_mut().insert(header::LOCATION, v);
            }
            resp
        }
        Err(ReceiveError::UnsupportedMediaType(_)) => (
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            Json(serde_json::json!({ "error": format!("expected {MEDIA_TYPE}") })),
        )
            .into_response(),
        Err(ReceiveError::Invalid(report)) => {
            (StatusCode::BAD_REQUEST, Json(report)).into_response()
        }
        Err(e @ ReceiveError::Storage(_)) => {
            tracing::error!(error = %e, "inbox write failed");
            (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(serde_json::json!({ "error": e.to_string() })),
            )
                .into_response()
        }
    }
}

async fn list(State(s): State<InboxState>) -> Response {
    ld_json(
        StatusCode::OK,
        serde_json::to_vec(&s.inbox.contains_listing()).unwrap_or_default(),
    )
}

async fn entry(State(s): State<InboxState>, UrlPath(entry): UrlPath<String>) -> Response {
    match s.inbox.get(&entry) {
        Some(e) => ld_json(StatusCode::OK, e.raw_bytes),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

fn ld_json(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, MEDIA_TYPE)], body).into_response()
}

/// A running HTTP service.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> Url {
        Url::parse(&format!("http://{}/", self.addr)).expect("socket address forms a url")
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

/// Serves `router` on an already bound listener until shut down.
pub fn serve(listener: TcpListener, router: Router) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!(%addr, error = %e, "server stopped");
        }
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

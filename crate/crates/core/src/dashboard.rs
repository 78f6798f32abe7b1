//! REST surface over the aggregator's registry for the review dashboard.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::actors::{Aggregator, ApproveError};
use crate::registry::{
    recipients_for, Author, MentionKey, MentionRecord, MentionState, RegistryError, SendPolicy,
};

/// The four dashboard tabs. Announced records are listed under Responded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Queue {
    Ready,
    Sent,
    Responded,
    Cancelled,
}

impl Queue {
    pub const ALL: [Queue; 4] = [
        Queue::Ready,
        Queue::Sent,
        Queue::Responded,
        Queue::Cancelled,
    ];

    pub fn parse(s: &str) -> Option<Queue> {
        match s {
            "ready" => Some(Queue::Ready),
            "sent" => Some(Queue::Sent),
            "responded" => Some(Queue::Responded),
            "cancelled" => Some(Queue::Cancelled),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Queue::Ready => "ready",
            Queue::Sent => "sent",
            Queue::Responded => "responded",
            Queue::Cancelled => "cancelled",
        }
    }

    pub fn holds(self, state: MentionState) -> bool {
        matches!(
            (self, state),
            (Queue::Ready, MentionState::Ready)
                | (Queue::Sent, MentionState::Sent)
                | (
                    Queue::Responded,
                    MentionState::Responded | MentionState::Announced
                )
                | (Queue::Cancelled, MentionState::Cancelled)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueRow {
    pub key: MentionKey,
    pub oai_id: String,
    pub title: String,
    pub authors_display: String,
    pub status_label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueView {
    pub queue: Queue,
    pub rows: Vec<QueueRow>,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    /// Footer text such as `1 - 10 of 100`.
    pub range_label: String,
}

pub fn status_label(record: &MentionRecord) -> String {
    match (record.state, record.response_kind) {
        (MentionState::Ready, _) => "Ready for validation".into(),
        (MentionState::Sent, _) => "Waiting for the author".into(),
        (MentionState::Responded, Some(k)) => format!("Responded ({})", k.as_str()),
        (MentionState::Responded, None) => "Responded".into(),
        (MentionState::Announced, _) if record.pid.is_some() => "Announced, archived".into(),
        (MentionState::Announced, _) => "Announced".into(),
        (MentionState::Cancelled, _) => "Cancelled".into(),
    }
}

fn range_label(page: usize, page_size: usize, shown: usize, total: usize) -> String {
    if shown == 0 {
        return format!("0 - 0 of {total}");
    }
    let first = (page - 1) * page_size + 1;
    format!("{first} - {} of {total}", first + shown - 1)
}

/// Records of a queue: Ready in sending order, the rest in the order they
/// reached their current state.
pub fn queue_records(aggregator: &Aggregator, queue: Queue) -> Vec<MentionRecord> {
    let registry = aggregator.registry();
    if queue == Queue::Ready {
        return registry.select_for_sending(&SendPolicy::default());
    }
    let mut records: Vec<_> = registry
        .records()
        .into_iter()
        .filter(|r| queue.holds(r.state))
        .collect();
    records.sort_by_key(|r| r.state_seq());
    records
}

pub fn queue_view(
    aggregator: &Aggregator,
    queue: Queue,
    page: usize,
    page_size: usize,
) -> QueueView {
    let records = queue_records(aggregator, queue);
    let total = records.len();
    let rows: Vec<QueueRow> = records
        .iter()
        .skip((page - 1).saturating_mul(page_size))
        .take(page_size)
        .map(|r| QueueRow {
            key: r.key.clone(),
            oai_id: r.oai_id.clone(),
            title: r.paper_title.clone(),
            authors_display: r.authors_display(),
            status_label: status_label(r),
            confidence: r.descriptor.confidence.value(),
        })
        .collect();
    QueueView {
        queue,
        range_label: range_label(page, page_size, rows.len(), total),
        rows,
        total,
        page,
        page_size,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionDetail {
    #[serde(flatten)]
    pub record: MentionRecord,
    pub status_label: String,
    pub recipients: Vec<Author>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    pub states: std::collections::BTreeMap<MentionState, usize>,
    pub queues: std::collections::BTreeMap<String, usize>,
    pub total: usize,
}

pub fn tallies(aggregator: &Aggregator) -> Tallies {
    let tally = aggregator.registry().tally_by_state();
    let states: std::collections::BTreeMap<_, _> = tally.iter().collect();
    let queues = Queue::ALL
        .iter()
        .map(|q| {
            let n = tally
                .iter()
                .filter(|(s, _)| q.holds(*s))
                .map(|(_, n)| n)
                .sum();
            (q.as_str().to_string(), n)
        })
        .collect();
    Tallies {
        states,
        queues,
        total: tally.total(),
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "oai_id",
    "title",
    "software_name",
    "confidence",
    "mention_type",
    "state",
    "pid",
];

/// All records, in registry order, as RFC 4180 CSV.
pub fn export_csv(records: &[MentionRecord]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for r in records {
        w.write_record([
            r.oai_id.clone(),
            r.paper_title.clone(),
            r.descriptor.citation.name.clone(),
            r.descriptor.confidence.to_string(),
            r.descriptor.mention_type.as_str().to_string(),
            r.state.as_str().to_string(),
            r.pid.as_ref().map(|p| p.to_string()).unwrap_or_default(),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

#[derive(Clone)]
pub struct DashboardState {
    pub aggregator: Arc<Aggregator>,
    /// Domain used to compute who would receive a notification.
    pub institution_domain: String,
    /// Where settings are saved on every successful PUT.
    pub settings_path: Option<PathBuf>,
}

pub fn router(state: DashboardState) -> Router {
    Router::new()
        .route("/api/mentions", get(list_mentions))
        .route("/api/mentions/{key}", get(mention_detail))
        .route("/api/mentions/{key}/approve", post(approve))
        .route("/api/mentions/{key}/cancel", post(cancel))
        .route("/api/settings", get(get_settings).put(put_settings))
        .route("/api/export.csv", get(export))
        .route("/api/tallies", get(get_tallies))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

#[derive(Deserialize)]
struct ListQuery {
    state: Option<String>,
    page: Option<String>,
    page_size: Option<String>,
}

async fn list_mentions(State(s): State<DashboardState>, Query(q): Query<ListQuery>) -> Response {
    let Some(queue) = Queue::parse(q.state.as_deref().unwrap_or("ready")) else {
        return error(
            StatusCode::BAD_REQUEST,
            format!("unknown state {:?}", q.state.unwrap_or_default()),
        );
    };
    let number = |v: Option<String>, default: usize| -> Result<usize, String> {
        match v {
            None => Ok(default),
            Some(t) => t
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| format!("expected a positive integer, got {t:?}")),
        }
    };
    let page = match number(q.page, 1) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let page_size = match number(q.page_size, 10) {
        Ok(p) if p <= 500 => p,
        Ok(p) => return error(StatusCode::BAD_REQUEST, format!("page_size {p} above 500")),
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    Json(queue_view(&s.aggregator, queue, page, page_size)).into_response()
}

async fn mention_detail(
    State(s): State<DashboardState>,
    UrlPath(key): UrlPath<String>,
) -> Response {
    let Some(record) = s.aggregator.registry().get(&MentionKey::from(key.as_str())) else {
        return error(StatusCode::NOT_FOUND, format!("unknown mention {key}"));
    };
    let recipients = recipients_for(
        &record.authors,
        &s.aggregator.policy(),
        &s.institution_domain,
    );
    Json(MentionDetail {
        status_label: status_label(&record),
        record,
        recipients,
    })
    .into_response()
}

async fn approve(State(s): State<DashboardState>, UrlPath(key): UrlPath<String>) -> Response {
    match s.aggregator.approve(&MentionKey::from(key.as_str())).await {
        Ok(o) => Json(serde_json::json!({
            "delivered": o.delivered,
            "offer_id": o.offer_id,
            "attempts": o.receipt.attempts,
        }))
        .into_response(),
        Err(e @ ApproveError::Unknown(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ ApproveError::NotReady(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e @ ApproveError::NoRoute(_)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn cancel(State(s): State<DashboardState>, UrlPath(key): UrlPath<String>) -> Response {
    match s.aggregator.cancel(&MentionKey::from(key.as_str())).await {
        Ok(state) => Json(serde_json::json!({ "state": state })).into_response(),
        Err(e @ RegistryError::UnknownRecord(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ RegistryError::IllegalTransition { .. }) => {
            error(StatusCode::CONFLICT, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_settings(State(s): State<DashboardState>) -> Response {
    Json(s.aggregator.policy()).into_response()
}

async fn put_settings(State(s): State<DashboardState>, body: axum::body::Bytes) -> Response {
    let policy: SendPolicy = match serde_json::from_slice(&body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if let Err(e) = policy.validate() {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    if let Some(path) = &s.settings_path {
        let text = serde_json::to_vec_pretty(&policy).expect("policy serializes");
        if let Err(e) = std::fs::write(path, text) {
            return error(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("saving settings: {e}"),
            );
        }
    }
    s.aggregator.set_policy(policy.clone());
    Json(policy).into_response()
}

async fn export(State(s): State<DashboardState>) -> Response {
    let body = export_csv(&s.aggregator.registry().records());
    (
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
            (
                header::CONTENT_DISPOSITION,
                "attachment; filename=\"mentions.csv\"",
            ),
        ],
        body,
    )
        .into_response()
}

async fn get_tallies(State(s): State<DashboardState>) -> Response {
    Json(tallies(&s.aggregator)).into_response()
}

/// Background task that offers new Ready records whenever the policy
/// allows automatic sending. At most one sweep runs at a time.
pub fn spawn_auto_sender(
    aggregator: Arc<Aggregator>,
    every: Duration,
) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(every);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            ticker.tick().await;
            let policy = aggregator.policy();
            if policy.auto_send && !aggregator.registry().select_for_sending(&policy).is_empty() {
                let receipts = aggregator.offer_mentions(&policy).await;
                tracing::info!(offered = receipts.len(), "automatic sweep");
            }
        }
    })
}

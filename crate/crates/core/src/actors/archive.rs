use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::clock::Clock;
use crate::ldn::{inbox_router, Collect, Inbox};
use crate::notify::{ServiceEndpoint, SoftwareCitation, ValidationReport};
use crate::registry::{PersistentIdentifier, SwhObjectType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRequest {
    pub citation: SoftwareCitation,
    pub repository_link: String,
    pub requested_by: ServiceEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pid: PersistentIdentifier,
    pub archived_at: DateTime<Utc>,
}

impl RegistrationRequest {
    pub fn validate(&self) -> Result<(), ValidationReport> {
        let mut report = ValidationReport::new();
        if self.citation.name.trim().is_empty() {
            report.push("citation.name", "must be non-empty");
        }
        match url::Url::parse(&self.repository_link) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => {}
            _ => report.push("repository_link", "must be an absolute http(s) IRI"),
        }
        report.into_result()
    }

    /// Compact JSON of the citation with its code repository set to the
    /// requested link. This is what the identifier is computed over.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let citation = self
            .citation
            .clone()
            .with_repository_link(self.repository_link.clone());
        serde_json::to_vec(&citation).expect("citation serializes")
    }
}

/// Directory-style identifier over the canonical request bytes.
pub fn mint_pid(request: &RegistrationRequest) -> PersistentIdentifier {
    let digest: [u8; 20] = Sha1::digest(request.canonical_bytes()).into();
    PersistentIdentifier::new(SwhObjectType::Dir, digest)
}

/// Software archive: collects announces in its inbox and mints identifiers
/// for registration requests.
pub struct Archive {
    inbox: Arc<Inbox>,
    clock: Arc<dyn Clock>,
    archived: Mutex<HashMap<PersistentIdentifier, RegistrationResult>>,
    requests: Mutex<Vec<RegistrationRequest>>,
}

impl Archive {
    pub fn new(inbox: Arc<Inbox>, clock: Arc<dyn Clock>) -> Self {
        Self {
            inbox,
            clock,
            archived: Mutex::new(HashMap::new()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn inbox(&self) -> &Arc<Inbox> {
        &self.inbox
    }

    /// Registering the same content twice returns the first result.
    pub fn register(
        &self,
        request: RegistrationRequest,
    ) -> Result<RegistrationResult, ValidationReport> {
        request.validate()?;
        let pid = mint_pid(&request);
        self.requests.lock().push(request);
        let mut archived = self.archived.lock();
        let result = archived
            .entry(pid.clone())
            .or_insert_with(|| RegistrationResult {
                pid,
                archived_at: self.clock.now(),
            })
            .clone();
        Ok(result)
    }

    pub fn archived(&self) -> Vec<RegistrationResult> {
        let mut all: Vec<_> = self.archived.lock().values().cloned().collect();
        all.sort_by(|a, b| {
            a.archived_at
                .cmp(&b.archived_at)
                .then(a.pid.to_string().cmp(&b.pid.to_string()))
        });
        all
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().len()
    }

    pub fn router(self: &Arc<Self>) -> Router {
        let register = Router::new()
            .route("/register", post(register))
            .with_state(self.clone());
        inbox_router(self.inbox.clone(), Arc::new(Collect)).merge(register)
    }
}

async fn register(State(archive): State<Arc<Archive>>, body: axum::body::Bytes) -> Response {
    let request: RegistrationRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            let mut report = ValidationReport::new();
            report.push("document", e.to_string());
            return (StatusCode::BAD_REQUEST, Json(report)).into_response();
        }
    };
    match archive.register(request) {
        Ok(result) => (StatusCode::OK, Json(result)).into_response(),
        Err(report) => (StatusCode::BAD_REQUEST, Json(report)).into_response(),
    }
}

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::repository::{PidNotice, RevocationBody};
use crate::clock::Clock;
use crate::ldn::{inbox_router, Deliverer, DeliveryReceipt, Inbox, InboxConsumer, InboxEntry};
use crate::notify::{
    build_announce, canonical_context, ActorRef, FixedIds, IdSource, NotificationId,
    NotificationKind, NotificationPayload, SeededIds, ServiceEndpoint,
};
use crate::registry::{
    MentionKey, MentionRecord, MentionState, PersistentIdentifier, Registry, RegistryError,
    RegistryEvent, ResponseKind, SendPolicy,
};

/// Which repository receives offers for papers whose oai id starts with
/// `oai_prefix`. An empty prefix matches everything.
#[derive(Debug, Clone)]
pub struct RepositoryRoute {
    pub oai_prefix: String,
    pub endpoint: ServiceEndpoint,
}

#[derive(Debug, Clone)]
pub struct AggregatorConfig {
    pub endpoint: ServiceEndpoint,
    pub actor: ActorRef,
    pub repositories: Vec<RepositoryRoute>,
    /// Services that receive an Announce for every validated mention.
    pub subscribers: Vec<ServiceEndpoint>,
    pub seed: u64,
    /// Offers left unanswered this long are cancelled.
    pub expiry: Option<chrono::Duration>,
}

#[derive(Debug, thiserror::Error)]
pub enum ResponseError {
    #[error("{0} is not a response")]
    NotAResponse(NotificationKind),
    #[error("no offer {0} was sent")]
    UnknownConversation(NotificationId),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseEffect {
    Rejected,
    Announced,
    /// Some subscriber did not take the Announce yet; retried on sweeps.
    AnnouncePending,
}

#[derive(Debug, thiserror::Error)]
pub enum ApproveError {
    #[error("unknown record {0}")]
    Unknown(MentionKey),
    #[error("record is {0}, not ready")]
    NotReady(MentionState),
    #[error("no repository route for {0}")]
    NoRoute(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproveOutcome {
    pub delivered: bool,
    pub offer_id: NotificationId,
    pub receipt: DeliveryReceipt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PidDisposition {
    Assigned,
    /// The record is not announced yet; the pid is applied when it is.
    Held,
    Duplicate,
}

#[derive(Debug, thiserror::Error)]
pub enum PidError {
    #[error("no offer {0} was sent")]
    UnknownConversation(NotificationId),
    #[error("record is {0} and cannot take a pid")]
    NotAllowed(MentionState),
    #[error("record already has pid {0}")]
    Conflict(PersistentIdentifier),
}

struct AnnounceProgress {
    id: NotificationId,
    delivered: BTreeSet<String>,
}

/// The aggregator: owns the registry, sends offers, announces validated
/// mentions and records the identifiers the archive minted.
pub struct Aggregator {
    cfg: AggregatorConfig,
    registry: Arc<Registry>,
    inbox: Arc<Inbox>,
    deliverer: Deliverer,
    clock: Arc<dyn Clock>,
    policy: RwLock<SendPolicy>,
    ids: Mutex<SeededIds>,
    announces: Mutex<HashMap<MentionKey, AnnounceProgress>>,
    held_pids: Mutex<HashMap<NotificationId, PersistentIdentifier>>,
    sweep: tokio::sync::Mutex<()>,
}

impl Aggregator {
    pub fn new(
        cfg: AggregatorConfig,
        registry: Arc<Registry>,
        inbox: Arc<Inbox>,
        deliverer: Deliverer,
        clock: Arc<dyn Clock>,
        policy: SendPolicy,
    ) -> Self {
        let ids = SeededIds::new(cfg.seed);
        Self {
            cfg,
            registry,
            inbox,
            deliverer,
            clock,
            policy: RwLock::new(policy),
            ids: Mutex::new(ids),
            announces: Mutex::new(HashMap::new()),
            held_pids: Mutex::new(HashMap::new()),
            sweep: tokio::sync::Mutex::new(()),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn inbox(&self) -> &Arc<Inbox> {
        &self.inbox
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.cfg
    }

    pub fn policy(&self) -> SendPolicy {
        self.policy.read().clone()
    }

    pub fn set_policy(&self, policy: SendPolicy) {
        *self.policy.write() = policy;
    }

    fn route_for(&self, oai_id: &str) -> Option<&ServiceEndpoint> {
        self.cfg
            .repositories
            .iter()
            .find(|r| oai_id.starts_with(&r.oai_prefix))
            .map(|r| &r.endpoint)
    }

    /// The offer as it was (or would be) sent for a record.
    pub fn offer_for(
        &self,
        record: &MentionRecord,
        id: NotificationId,
    ) -> Option<NotificationPayload> {
        let target = self.route_for(&record.oai_id)?.clone();
        Some(NotificationPayload {
            context: canonical_context(),
            id,
            kind: NotificationKind::Offer,
            actor: self.cfg.actor.clone(),
            object: record.descriptor.clone(),
            origin: self.cfg.endpoint.clone(),
            target,
            in_reply_to: None,
            conversation_context: None,
        })
    }

    /// Offers every record the policy admits, in sending order. Records
    /// whose delivery fails stay Ready.
    pub async fn offer_mentions(&self, policy: &SendPolicy) -> Vec<DeliveryReceipt> {
        let _guard = self.sweep.lock().await;
        let mut receipts = Vec::new();
        for record in self.registry.select_for_sending(policy) {
            match self.send_offer(&record).await {
                Ok(r) => receipts.push(r),
                Err(e) => tracing::warn!(key = %record.key, error = %e, "not offered"),
            }
        }
        receipts
    }

    /// Runs `offer_mentions` with the current policy if it allows automatic
    /// sending.
    pub async fn auto_offer(&self) -> Vec<DeliveryReceipt> {
        let policy = self.policy();
        if policy.auto_send {
            self.offer_mentions(&policy).await
        } else {
            Vec::new()
        }
    }

    async fn send_offer(&self, record: &MentionRecord) -> Result<DeliveryReceipt, ApproveError> {
        let id = self.ids.lock().next_id();
        let offer = self
            .offer_for(record, id)
            .ok_or_else(|| ApproveError::NoRoute(record.oai_id.clone()))?;
        let receipt = match self.deliverer.deliver(&offer).await {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(key = %record.key, error = %e, "offer failed validation");
                return Err(ApproveError::NotReady(record.state));
            }
        };
        if receipt.delivered() {
            if let Err(e) = self
                .registry
                .transition(&record.key, RegistryEvent::OfferSent(id))
            {
                tracing::warn!(key = %record.key, error = %e, "offer delivered but not recorded");
            }
        } else {
            tracing::warn!(key = %record.key, attempts = receipt.attempts, "offer not delivered");
        }
        Ok(receipt)
    }

    /// Offers a single Ready record, as the dashboard's approve button does.
    pub async fn approve(&self, key: &MentionKey) -> Result<ApproveOutcome, ApproveError> {
        let _guard = self.sweep.lock().await;
        let record = self
            .registry
            .get(key)
            .ok_or_else(|| ApproveError::Unknown(key.clone()))?;
        if record.state != MentionState::Ready {
            return Err(ApproveError::NotReady(record.state));
        }
        let receipt = self.send_offer(&record).await?;
        Ok(ApproveOutcome {
            delivered: receipt.delivered(),
            offer_id: receipt.notification_id,
            receipt,
        })
    }

    /// Cancels a Ready or Sent record; for Sent ones the repository is told
    /// to close the offer.
    pub async fn cancel(&self, key: &MentionKey) -> Result<MentionState, RegistryError> {
        let before = self
            .registry
            .get(key)
            .ok_or_else(|| RegistryError::UnknownRecord(key.clone()))?;
        let state = self
            .registry
            .transition(key, RegistryEvent::ManagerCancelled)?;
        if before.state == MentionState::Sent {
            if let (Some(offer_id), Some(repo)) = (before.offer_id, self.route_for(&before.oai_id))
            {
                self.revoke_at(repo, offer_id).await;
            }
        }
        Ok(state)
    }

    async fn revoke_at(&self, repo: &ServiceEndpoint, offer: NotificationId) {
        let url = match url::Url::parse(&repo.id).and_then(|u| u.join("revocations")) {
            Ok(u) => u,
            Err(e) => {
                tracing::error!(repository = %repo.id, error = %e, "no revocation address");
                return;
            }
        };
        let body = serde_json::to_vec(&RevocationBody { offer }).expect("body serializes");
        let x = self
            .deliverer
            .post(url.as_str(), "application/json", body)
            .await;
        if !x.succeeded() {
            tracing::warn!(%offer, status = ?x.status, "revocation not acknowledged");
        }
    }

    /// Cancels Sent records whose offer has waited longer than the expiry.
    pub async fn expire(&self) -> usize {
        let Some(expiry) = self.cfg.expiry else {
            return 0;
        };
        let now = self.clock.now();
        let stale: Vec<MentionKey> = self
            .registry
            .records()
            .into_iter()
            .filter(|r| r.state == MentionState::Sent)
            .filter(|r| r.event_log.last().is_some_and(|e| e.ts + expiry <= now))
            .map(|r| r.key)
            .collect();
        let mut n = 0;
        for key in stale {
            match self.cancel(&key).await {
                Ok(_) => n += 1,
                Err(e) => tracing::debug!(%key, error = %e, "expiry skipped"),
            }
        }
        n
    }

    pub async fn on_response(
        &self,
        response: &NotificationPayload,
    ) -> Result<ResponseEffect, ResponseError> {
        let kind = match response.kind {
            NotificationKind::Accept => ResponseKind::Validated,
            NotificationKind::TentativeAccept => ResponseKind::Edited,
            NotificationKind::Reject => ResponseKind::Rejected,
            other => return Err(ResponseError::NotAResponse(other)),
        };
        let offer_id = response.in_reply_to.expect("responses are threaded");
        let record = self
            .registry
            .find_by_offer(&offer_id)
            .ok_or(ResponseError::UnknownConversation(offer_id))?;
        let edited = (kind == ResponseKind::Edited).then(|| response.object.clone());
        self.registry.transition(
            &record.key,
            RegistryEvent::ResponseReceived { kind, edited },
        )?;
        if !kind.is_positive() {
            return Ok(ResponseEffect::Rejected);
        }
        Ok(self.announce(&record.key).await)
    }

    /// Sends the Announce to every subscriber that has not taken it yet and
    /// marks the record Announced once all have.
    async fn announce(&self, key: &MentionKey) -> ResponseEffect {
        let Some(record) = self.registry.get(key) else {
            return ResponseEffect::AnnouncePending;
        };
        let Some(offer_id) = record.offer_id else {
            return ResponseEffect::AnnouncePending;
        };
        let Some(offer) = self.offer_for(&record, offer_id) else {
            return ResponseEffect::AnnouncePending;
        };
        let (announce_id, done) = {
            let mut all = self.announces.lock();
            let p = all.entry(key.clone()).or_insert_with(|| AnnounceProgress {
                id: self.ids.lock().next_id(),
                delivered: BTreeSet::new(),
            });
            (p.id, p.delivered.clone())
        };
        for subscriber in &self.cfg.subscribers {
            if done.contains(&subscriber.inbox) {
                continue;
            }
            let announce = build_announce(
                &offer,
                self.cfg.actor.clone(),
                self.cfg.endpoint.clone(),
                subscriber.clone(),
                &mut FixedIds::new([announce_id]),
            )
            .expect("reconstructed offer is an Offer");
            match self.deliverer.deliver(&announce).await {
                Ok(r) if r.delivered() => {
                    if let Some(p) = self.announces.lock().get_mut(key) {
                        p.delivered.insert(subscriber.inbox.clone());
                    }
                }
                Ok(r) => {
                    tracing::warn!(%key, subscriber = %subscriber.inbox, attempts = r.attempts, "announce not delivered")
                }
                Err(e) => tracing::error!(%key, error = %e, "announce failed validation"),
            }
        }
        let complete = self.announces.lock().get(key).is_some_and(|p| {
            self.cfg
                .subscribers
                .iter()
                .all(|s| p.delivered.contains(&s.inbox))
        });
        if !complete {
            return ResponseEffect::AnnouncePending;
        }
        let pid = self.held_pids.lock().remove(&offer_id);
        match self
            .registry
            .transition(key, RegistryEvent::Announced(pid.clone()))
        {
            Ok(_) => ResponseEffect::Announced,
            Err(e) => {
                if let Some(pid) = pid {
                    self.held_pids.lock().insert(offer_id, pid);
                }
                tracing::debug!(%key, error = %e, "announce transition skipped");
                ResponseEffect::AnnouncePending
            }
        }
    }

    /// Re-announces positively answered records still waiting on a subscriber.
    pub async fn retry_announces(&self) -> usize {
        let waiting: Vec<MentionKey> = self
            .registry
            .records()
            .into_iter()
            .filter(|r| r.state == MentionState::Responded)
            .filter(|r| r.response_kind.is_some_and(ResponseKind::is_positive))
            .map(|r| r.key)
            .collect();
        let mut n = 0;
        for key in waiting {
            if self.announce(&key).await == ResponseEffect::Announced {
                n += 1;
            }
        }
        n
    }

    pub fn accept_pid(&self, notice: &PidNotice) -> Result<PidDisposition, PidError> {
        let record = self
            .registry
            .find_by_offer(&notice.in_reply_to)
            .ok_or(PidError::UnknownConversation(notice.in_reply_to))?;
        match (record.state, &record.pid) {
            (MentionState::Announced, Some(p)) if *p == notice.pid => Ok(PidDisposition::Duplicate),
            (MentionState::Announced, Some(p)) => Err(PidError::Conflict(p.clone())),
            (MentionState::Announced, None) => {
                self.registry
                    .assign_pid(&record.key, notice.pid.clone())
                    .map_err(|_| PidError::NotAllowed(record.state))?;
                Ok(PidDisposition::Assigned)
            }
            (MentionState::Sent, _) | (MentionState::Responded, _)
                if record.response_kind.is_none_or(ResponseKind::is_positive) =>
            {
                self.held_pids
                    .lock()
                    .insert(notice.in_reply_to, notice.pid.clone());
                Ok(PidDisposition::Held)
            }
            (state, _) => Err(PidError::NotAllowed(state)),
        }
    }

    /// Offers and announces not yet settled, for quiescence checks.
    pub fn open_conversations(&self) -> usize {
        let t = self.registry.tally_by_state();
        t.get(MentionState::Sent) + t.get(MentionState::Responded)
    }

    pub fn router(self: &Arc<Self>) -> Router {
        let own = Router::new()
            .route("/registrations", post(registration))
            .with_state(self.clone());
        inbox_router(
            self.inbox.clone(),
            Arc::new(AggregatorConsumer(self.clone())),
        )
        .merge(own)
    }
}

struct AggregatorConsumer(Arc<Aggregator>);

#[async_trait]
impl InboxConsumer for AggregatorConsumer {
    async fn consume(&self, entry: &InboxEntry) {
        match self.0.on_response(&entry.payload).await {
            Ok(effect) => tracing::debug!(id = %entry.payload.id, ?effect, "response handled"),
            Err(e) => tracing::warn!(id = %entry.payload.id, error = %e, "response not applied"),
        }
    }
}

async fn registration(State(agg): State<Arc<Aggregator>>, body: axum::body::Bytes) -> Response {
    let notice: PidNotice = match serde_json::from_slice(&body) {
        Ok(n) => n,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(serde_json::json!({ "error": e.to_string() })),
            )
                .into_response()
        }
    };
    let (status, body) = match agg.accept_pid(&notice) {
        Ok(d) => (StatusCode::OK, serde_json::json!({ "status": d })),
        Err(e @ PidError::UnknownConversation(_)) => (
            StatusCode::NOT_FOUND,
            serde_json::json!({ "error": e.to_string() }),
        ),
        Err(e) => (
            StatusCode::CONFLICT,
            serde_json::json!({ "error": e.to_string() }),
        ),
    };
    (status, Json(body)).into_response()
}

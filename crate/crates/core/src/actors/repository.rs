use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{RegistrationRequest, RegistrationResult};
use super::mail::{subject_for, AuthorAction, AuthorMessage, MailChannel, MessageMention};
use crate::ldn::{inbox_router, Deliverer, Inbox, InboxConsumer, InboxEntry};
use crate::notify::{
    build_response, build_tentative_accept, ActorKind, ActorRef, IdSource, MentionDescriptor,
    NotificationId, NotificationKind, NotificationPayload, NotifyError, SeededIds, ServiceEndpoint,
    ValidationReport, Verdict,
};
use crate::registry::{recipients_for, Author, MentionDraft, PersistentIdentifier, SendPolicy};

/// A paper the repository holds, as far as routing needs to know it.
#[derive(Debug, Clone, PartialEq)]
pub struct Paper {
    pub oai_id: String,
    pub title: String,
    pub authors: Vec<Author>,
}

/// Papers indexed by their record IRI (the `object.id` of an offer).
#[derive(Debug, Clone, Default)]
pub struct Catalogue(HashMap<String, Paper>);

impl Catalogue {
    pub fn from_drafts(drafts: &[MentionDraft]) -> Self {
        let mut map = HashMap::new();
        for d in drafts {
            map.entry(d.descriptor.record_id.clone())
                .or_insert_with(|| Paper {
                    oai_id: d.oai_id.clone(),
                    title: d.paper_title.clone(),
                    authors: d.authors.clone(),
                });
        }
        Self(map)
    }

    pub fn insert(&mut self, record_iri: impl Into<String>, paper: Paper) {
        self.0.insert(record_iri.into(), paper);
    }

    pub fn get(&self, record_iri: &str) -> Option<&Paper> {
        self.0.get(record_iri)
    }
}

#[derive(Debug, Clone)]
pub struct RepositoryConfig {
    pub endpoint: ServiceEndpoint,
    pub actor: ActorRef,
    pub institution_domain: String,
    pub max_recipients: usize,
    pub archive_register_url: String,
    /// Prefix for author action links, ending in `/actions/`.
    pub action_base: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OfferDisposition {
    Queued { message_ids: Vec<NotificationId> },
    NoEligibleRecipient,
    Duplicate,
}

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("unknown token")]
    UnknownToken,
    #[error("token already used")]
    TokenAlreadyUsed,
    #[error("token is for {expected}, not {requested}")]
    ActionMismatch {
        expected: &'static str,
        requested: &'static str,
    },
    #[error("edit needs an edited descriptor")]
    EditMissing,
    #[error("edited descriptor is invalid: {0}")]
    InvalidEdit(ValidationReport),
}

#[derive(Debug, thiserror::Error)]
pub enum RegistrationError {
    #[error("archive unavailable after {attempts} attempts")]
    ArchiveUnavailable { attempts: u32, status: Option<u16> },
    #[error("archive refused the request ({status}): {body}")]
    Refused { status: u16, body: String },
    #[error("mention has no repository link")]
    NoRepositoryLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub offer_id: NotificationId,
    pub action: AuthorAction,
    pub response_id: Option<NotificationId>,
    pub delivered: bool,
    pub pid: Option<PersistentIdentifier>,
}

/// Body the repository sends to the aggregator once an identifier exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidNotice {
    #[serde(rename = "inReplyTo")]
    pub in_reply_to: NotificationId,
    pub pid: PersistentIdentifier,
    #[serde(rename = "archivedAt")]
    pub archived_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Open,
    Answered,
    AutoRejected,
    Revoked,
}

struct OfferSlot {
    offer: NotificationPayload,
    slot: Slot,
}

struct TokenInfo {
    offer_id: NotificationId,
    action: AuthorAction,
    holder: Author,
}

struct PendingRegistration {
    offer_id: NotificationId,
    notify_url: String,
    request: RegistrationRequest,
    result: Option<RegistrationResult>,
}

struct RepoState {
    offers: HashMap<NotificationId, OfferSlot>,
    tokens: HashMap<String, TokenInfo>,
    drafts: Vec<AuthorMessage>,
    outbox: VecDeque<NotificationPayload>,
    pending: VecDeque<PendingRegistration>,
    pids: BTreeMap<NotificationId, RegistrationResult>,
    ids: SeededIds,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickReport {
    pub mail_sent: usize,
    pub responses_delivered: usize,
    pub registrations_completed: usize,
}

impl TickReport {
    pub fn progressed(&self) -> bool {
        self.mail_sent + self.responses_delivered + self.registrations_completed > 0
    }
}

/// The institutional repository: turns offers into author messages, turns
/// author actions into responses, and registers validated software.
pub struct Repository {
    cfg: RepositoryConfig,
    catalogue: Catalogue,
    inbox: Arc<Inbox>,
    mail: Arc<MailChannel>,
    deliverer: Deliverer,
    state: Mutex<RepoState>,
}

impl Repository {
    pub fn new(
        cfg: RepositoryConfig,
        catalogue: Catalogue,
        inbox: Arc<Inbox>,
        mail: Arc<MailChannel>,
        deliverer: Deliverer,
    ) -> Self {
        let state = RepoState {
            offers: HashMap::new(),
            tokens: HashMap::new(),
            drafts: Vec::new(),
            outbox: VecDeque::new(),
            pending: VecDeque::new(),
            pids: BTreeMap::new(),
            ids: SeededIds::new(cfg.seed ^ 0x5245_504f),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x544f_4b4e),
        };
        Self {
            cfg,
            catalogue,
            inbox,
            mail,
            deliverer,
            state: Mutex::new(state),
        }
    }

    pub fn inbox(&self) -> &Arc<Inbox> {
        &self.inbox
    }

    pub fn mail(&self) -> &Arc<MailChannel> {
        &self.mail
    }

    pub fn config(&self) -> &RepositoryConfig {
        &self.cfg
    }

    /// Routes an offer to the paper's authors at this institution. Mentions
    /// of one paper collect in one message until the next mail flush.
    pub fn on_offer(&self, offer: &NotificationPayload) -> Result<OfferDisposition, NotifyError> {
        if offer.kind != NotificationKind::Offer {
            return Err(NotifyError::NotAnOffer(offer.kind));
        }
        let mut guard = self.state.lock();
        let st = &mut *guard;
        if st.offers.contains_key(&offer.id) {
            return Ok(OfferDisposition::Duplicate);
        }
        let policy = SendPolicy {
            max_authors_per_institution: self.cfg.max_recipients.max(1),
            ..SendPolicy::default()
        };
        let paper = self.catalogue.get(&offer.object.record_id);
        let recipients = paper
            .map(|p| recipients_for(&p.authors, &policy, &self.cfg.institution_domain))
            .unwrap_or_default();

        if recipients.is_empty() {
            let reject =
                build_response(offer, Verdict::Reject, self.cfg.actor.clone(), &mut st.ids)?;
            tracing::warn!(
                offer = %offer.id,
                record = %offer.object.record_id,
                "no recipient at {}; answering with Reject",
                self.cfg.institution_domain
            );
            st.outbox.push_back(reject);
            st.offers.insert(
                offer.id,
                OfferSlot {
                    offer: offer.clone(),
                    slot: Slot::AutoRejected,
                },
            );
            return Ok(OfferDisposition::NoEligibleRecipient);
        }

        let paper = paper.expect("recipients imply a paper");
        let mut message_ids = Vec::new();
        for recipient in recipients {
            let mut tokens = BTreeMap::new();
            for action in AuthorAction::ALL {
                let token = fresh_token(&mut st.rng);
                st.tokens.insert(
                    token.clone(),
                    TokenInfo {
                        offer_id: offer.id,
                        action,
                        holder: recipient.clone(),
                    },
                );
                tokens.insert(action, token);
            }
            let mention = MessageMention {
                offer_id: offer.id,
                descriptor: offer.object.clone(),
                tokens,
            };
            let existing = st
                .drafts
                .iter()
                .position(|m| m.oai_id == paper.oai_id && m.recipient == recipient);
            let idx = match existing {
                Some(i) => i,
                None => {
                    let message_id = st.ids.next_id();
                    st.drafts.push(AuthorMessage {
                        message_id,
                        recipient: recipient.clone(),
                        subject: subject_for(&paper.title),
                        oai_id: paper.oai_id.clone(),
                        paper_title: paper.title.clone(),
                        mentions: Vec::new(),
                        action_base: self.cfg.action_base.clone(),
                    });
                    st.drafts.len() - 1
                }
            };
            st.drafts[idx].mentions.push(mention);
            message_ids.push(st.drafts[idx].message_id);
        }
        st.offers.insert(
            offer.id,
            OfferSlot {
                offer: offer.clone(),
                slot: Slot::Open,
            },
        );
        Ok(OfferDisposition::Queued { message_ids })
    }

    /// Sends every message composed since the last flush.
    pub fn flush_mail(&self) -> usize {
        let drafts = std::mem::take(&mut self.state.lock().drafts);
        let n = drafts.len();
        for message in drafts {
            if let Err(e) = self.mail.deliver(message) {
                tracing::error!(error = %e, "could not write mailbox file");
            }
        }
        n
    }

    pub async fn on_author_action(
        &self,
        token: &str,
        action: AuthorAction,
        edited: Option<MentionDescriptor>,
    ) -> Result<ActionOutcome, ActionError> {
        let (response, offer) = {
            let mut guard = self.state.lock();
            let st = &mut *guard;
            let info = st.tokens.get(token).ok_or(ActionError::UnknownToken)?;
            let (offer_id, expected) = (info.offer_id, info.action);
            let responder = ActorRef::new(
                format!("mailto:{}", info.holder.email),
                info.holder.name.clone(),
                ActorKind::Person,
            );
            if expected != action {
                return Err(ActionError::ActionMismatch {
                    expected: expected.as_str(),
                    requested: action.as_str(),
                });
            }
            let slot = st
                .offers
                .get(&offer_id)
                .expect("tokens point at known offers");
            if slot.slot != Slot::Open {
                return Err(ActionError::TokenAlreadyUsed);
            }
            if action == AuthorAction::Ignore {
                return Ok(ActionOutcome {
                    offer_id,
                    action,
                    response_id: None,
                    delivered: false,
                    pid: None,
                });
            }
            let offer = slot.offer.clone();
            let response = match action {
                AuthorAction::Validate => {
                    build_response(&offer, Verdict::Accept, responder, &mut st.ids)
                }
                AuthorAction::Reject => {
                    build_response(&offer, Verdict::Reject, responder, &mut st.ids)
                }
                AuthorAction::Edit => {
                    let edited = edited.ok_or(ActionError::EditMissing)?;
                    if edited.record_id != offer.object.record_id {
                        let mut report = ValidationReport::new();
                        report.push("object.id", "must match the offered record");
                        return Err(ActionError::InvalidEdit(report));
                    }
                    build_tentative_accept(&offer, edited, responder, &mut st.ids)
                }
                AuthorAction::Ignore => unreachable!("handled above"),
            }
            .map_err(|e| match e {
                NotifyError::InvalidMention(r) | NotifyError::InvariantViolation(r) => {
                    ActionError::InvalidEdit(r)
                }
                other => ActionError::InvalidEdit({
                    let mut r = ValidationReport::new();
                    r.push("document", other.to_string());
                    r
                }),
            })?;
            st.offers.get_mut(&offer_id).expect("present").slot = Slot::Answered;
            (response, offer)
        };

        let delivered = self.send_response(&response).await;
        let mut pid = None;
        if matches!(action, AuthorAction::Validate | AuthorAction::Edit) {
            match self.request_registration(&offer, &response) {
                Ok(pending) => {
                    self.state.lock().pending.push_back(pending);
                    self.process_registrations().await;
                    pid = self.pid_for(&offer.id).map(|r| r.pid);
                }
                Err(e) => tracing::warn!(offer = %offer.id, error = %e, "not registering"),
            }
        }
        Ok(ActionOutcome {
            offer_id: offer.id,
            action,
            response_id: Some(response.id),
            delivered,
            pid,
        })
    }

    async fn send_response(&self, response: &NotificationPayload) -> bool {
        match self.deliverer.deliver(response).await {
            Ok(r) if r.delivered() => true,
            Ok(r) => {
                tracing::warn!(response = %response.id, attempts = r.attempts, "response not delivered; queued");
                self.state.lock().outbox.push_back(response.clone());
                false
            }
            Err(e) => {
                tracing::error!(response = %response.id, error = %e, "response could not be serialized");
                false
            }
        }
    }

    fn request_registration(
        &self,
        offer: &NotificationPayload,
        response: &NotificationPayload,
    ) -> Result<PendingRegistration, RegistrationError> {
        let citation = response.object.citation.clone();
        let link = citation
            .repository_link
            .clone()
            .ok_or(RegistrationError::NoRepositoryLink)?;
        let notify_url = url::Url::parse(&offer.origin.id)
            .and_then(|u| u.join("registrations"))
            .map(String::from)
            .unwrap_or_else(|_| format!("{}/registrations", offer.origin.id.trim_end_matches('/')));
        Ok(PendingRegistration {
            offer_id: offer.id,
            notify_url,
            request: RegistrationRequest {
                citation,
                repository_link: link,
                requested_by: self.cfg.endpoint.clone(),
            },
            result: None,
        })
    }

    /// Sends a registration request to the archive.
    pub async fn register_asset(
        &self,
        request: &RegistrationRequest,
    ) -> Result<RegistrationResult, RegistrationError> {
        let body = serde_json::to_vec(request).expect("request serializes");
        let x = self
            .deliverer
            .post(&self.cfg.archive_register_url, "application/json", body)
            .await;
        match x.status {
            Some(s) if (200..300).contains(&s) => {
                serde_json::from_slice(&x.body).map_err(|e| RegistrationError::Refused {
                    status: s,
                    body: format!("unreadable result: {e}"),
                })
            }
            Some(s) if s < 500 => Err(RegistrationError::Refused {
                status: s,
                body: String::from_utf8_lossy(&x.body).into_owned(),
            }),
            status => Err(RegistrationError::ArchiveUnavailable {
                attempts: x.attempts,
                status,
            }),
        }
    }

    /// Drives queued registrations forward: archive first, then tell the
    /// aggregator. Unfinished ones stay queued.
    async fn process_registrations(&self) -> usize {
        let queued: Vec<_> = self.state.lock().pending.drain(..).collect();
        let mut done = 0;
        for mut p in queued {
            if p.result.is_none() {
                match self.register_asset(&p.request).await {
                    Ok(r) => {
                        self.state.lock().pids.insert(p.offer_id, r.clone());
                        p.result = Some(r);
                    }
                    Err(RegistrationError::Refused { status, body }) => {
                        tracing::error!(offer = %p.offer_id, status, body, "archive refused registration");
                        continue;
                    }
                    Err(e) => {
                        tracing::warn!(offer = %p.offer_id, error = %e, "registration postponed");
                        self.state.lock().pending.push_back(p);
                        continue;
                    }
                }
            }
            let result = p.result.clone().expect("set above");
            let notice = PidNotice {
                in_reply_to: p.offer_id,
                pid: result.pid,
                archived_at: result.archived_at,
            };
            let body = serde_json::to_vec(&notice).expect("notice serializes");
            let x = self
                .deliverer
                .post(&p.notify_url, "application/json", body)
                .await;
            if x.succeeded() {
                done += 1;
            } else if x.status.is_some_and(|s| s < 500) {
                tracing::error!(offer = %p.offer_id, status = ?x.status, "aggregator refused identifier");
            } else {
                self.state.lock().pending.push_back(p);
            }
        }
        done
    }

    async fn flush_outbox(&self) -> usize {
        let queued: Vec<_> = self.state.lock().outbox.drain(..).collect();
        let mut sent = 0;
        for response in queued {
            match self.deliverer.deliver(&response).await {
                Ok(r) if r.delivered() => sent += 1,
                Ok(_) => self.state.lock().outbox.push_back(response),
                Err(e) => tracing::error!(error = %e, "dropping unserializable response"),
            }
        }
        sent
    }

    /// One round of background work: mail, queued responses, registrations.
    pub async fn tick(&self) -> TickReport {
        TickReport {
            mail_sent: self.flush_mail(),
            responses_delivered: self.flush_outbox().await,
            registrations_completed: self.process_registrations().await,
        }
    }

    /// Closes an offer so none of its tokens can be used any more.
    pub fn revoke(&self, offer_id: &NotificationId) -> Option<bool> {
        let mut st = self.state.lock();
        let slot = st.offers.get_mut(offer_id)?;
        let was_open = slot.slot == Slot::Open;
        if was_open {
            slot.slot = Slot::Revoked;
        }
        Some(was_open)
    }

    pub fn pid_for(&self, offer_id: &NotificationId) -> Option<RegistrationResult> {
        self.state.lock().pids.get(offer_id).cloned()
    }

    pub fn pending_work(&self) -> usize {
        let st = self.state.lock();
        st.drafts.len() + st.outbox.len() + st.pending.len()
    }

    pub fn open_offers(&self) -> usize {
        self.state
            .lock()
            .offers
            .values()
            .filter(|s| s.slot == Slot::Open)
            .count()
    }

    pub fn router(self: &Arc<Self>) -> Router {
        let own = Router::new()
            .route("/actions/{token}", post(action))
            .route("/revocations", post(revocation))
            .with_state(self.clone());
        inbox_router(
            self.inbox.clone(),
            Arc::new(RepositoryConsumer(self.clone())),
        )
        .merge(own)
    }
}

fn fresh_token(rng: &mut ChaCha8Rng) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

struct RepositoryConsumer(Arc<Repository>);

#[async_trait]
impl InboxConsumer for RepositoryConsumer {
    async fn consume(&self, entry: &InboxEntry) {
        match self.0.on_offer(&entry.payload) {
            Ok(d) => tracing::debug!(offer = %entry.payload.id, ?d, "offer routed"),
            Err(e) => tracing::warn!(id = %entry.payload.id, error = %e, "ignoring notification"),
        }
    }
}

#[derive(Deserialize)]
struct ActionBody {
    action: String,
    #[serde(default)]
    edited: Option<MentionDescriptor>,
}

fn error_body(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn action(
    State(repo): State<Arc<Repository>>,
    UrlPath(token): UrlPath<String>,
    body: axum::body::Bytes,
) -> Response {
    let body: ActionBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let action: AuthorAction = match body.action.parse() {
        Ok(a) => a,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, e),
    };
    match repo.on_author_action(&token, action, body.edited).await {
        Ok(outcome) => (StatusCode::OK, Json(outcome)).into_response(),
        Err(e @ ActionError::UnknownToken) => error_body(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ ActionError::TokenAlreadyUsed) => error_body(StatusCode::CONFLICT, e.to_string()),
        Err(ActionError::InvalidEdit(report)) => {
            (StatusCode::BAD_REQUEST, Json(report)).into_response()
        }
        Err(e) => error_body(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

#[derive(Serialize, Deserialize)]
pub struct RevocationBody {
    pub offer: NotificationId,
}

async fn revocation(State(repo): State<Arc<Repository>>, body: axum::body::Bytes) -> Response {
    let body: RevocationBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match repo.revoke(&body.offer) {
        Some(revoked) => (
            StatusCode::OK,
            Json(serde_json::json!({ "revoked": revoked })),
        )
            .into_response(),
        None => error_body(StatusCode::NOT_FOUND, "unknown offer"),
    }
}

use super::error::NotifyError;
use super::ids::IdSource;
use super::payload::{
    canonical_context, ActorRef, MentionDescriptor, NotificationKind, NotificationPayload,
    ServiceEndpoint,
};

/// The response kinds an offer can receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Accept,
    TentativeAccept,
    Reject,
}

impl From<Verdict> for NotificationKind {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Accept => NotificationKind::Accept,
            Verdict::TentativeAccept => NotificationKind::TentativeAccept,
            Verdict::Reject => NotificationKind::Reject,
        }
    }
}

/// Offers a paper/software relationship for validation.
pub fn build_offer(
    mention: MentionDescriptor,
    manager: ActorRef,
    origin: ServiceEndpoint,
    target: ServiceEndpoint,
    ids: &mut dyn IdSource,
) -> Result<NotificationPayload, NotifyError> {
    mention.validate().map_err(NotifyError::InvalidMention)?;
    if origin.id == target.id {
        return Err(NotifyError::SelfAddressed(origin.id));
    }
    Ok(NotificationPayload {
        context: canonical_context(),
        id: ids.next_id(),
        kind: NotificationKind::Offer,
        actor: manager,
        object: mention,
        origin,
        target,
        in_reply_to: None,
        conversation_context: None,
    })
}

/// Answers an offer. The sender is the offer's target and the reply goes
/// back to the offer's origin; the object is carried over unchanged.
pub fn build_response(
    offer: &NotificationPayload,
    verdict: Verdict,
    responder: ActorRef,
    ids: &mut dyn IdSource,
) -> Result<NotificationPayload, NotifyError> {
    respond(offer, verdict, offer.object.clone(), responder, ids)
}

/// A TentativeAccept carrying an author-edited mention in place of the
/// offered one.
pub fn build_tentative_accept(
    offer: &NotificationPayload,
    edited: MentionDescriptor,
    responder: ActorRef,
    ids: &mut dyn IdSource,
) -> Result<NotificationPayload, NotifyError> {
    edited.validate().map_err(NotifyError::InvalidMention)?;
    respond(offer, Verdict::TentativeAccept, edited, responder, ids)
}

fn respond(
    offer: &NotificationPayload,
    verdict: Verdict,
    object: MentionDescriptor,
    responder: ActorRef,
    ids: &mut dyn IdSource,
) -> Result<NotificationPayload, NotifyError> {
    if offer.kind != NotificationKind::Offer {
        return Err(NotifyError::NotAnOffer(offer.kind));
    }
    Ok(NotificationPayload {
        context: canonical_context(),
        id: ids.next_id(),
        kind: verdict.into(),
        actor: responder,
        object,
        origin: offer.target.clone(),
        target: offer.origin.clone(),
        in_reply_to: Some(offer.id),
        conversation_context: None,
    })
}

/// Announces a validated relationship, threaded to the original offer.
/// The conversation context defaults to the paper's repository record.
pub fn build_announce(
    offer: &NotificationPayload,
    announcer: ActorRef,
    origin: ServiceEndpoint,
    target: ServiceEndpoint,
    ids: &mut dyn IdSource,
) -> Result<NotificationPayload, NotifyError> {
    if offer.kind != NotificationKind::Offer {
        return Err(NotifyError::NotAnOffer(offer.kind));
    }
    Ok(NotificationPayload {
        context: canonical_context(),
        id: ids.next_id(),
        kind: NotificationKind::Announce,
        actor: announcer,
        object: offer.object.clone(),
        origin,
        target,
        in_reply_to: Some(offer.id),
        conversation_context: Some(offer.object.record_id.clone()),
    })
}

use super::payload::{NotificationKind, NotificationPayload};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConversationVerdict {
    Valid,
    Invalid { index: usize, reason: String },
}

impl ConversationVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ConversationVerdict::Valid)
    }

    fn invalid(index: usize, reason: impl Into<String>) -> Self {
        ConversationVerdict::Invalid {
            index,
            reason: reason.into(),
        }
    }
}

/// Checks that `messages` follow offer → response* → optional announce,
/// every reply threads to the offer, and an announce only follows an
/// Accept or TentativeAccept.
pub fn validate_conversation(messages: &[NotificationPayload]) -> ConversationVerdict {
    let Some(offer) = messages.first() else {
        return ConversationVerdict::invalid(0, "empty conversation");
    };
    if offer.kind != NotificationKind::Offer {
        return ConversationVerdict::invalid(0, format!("starts with {}, not Offer", offer.kind));
    }

    let mut accepted = false;
    let mut announced = false;
    for (index, msg) in messages.iter().enumerate().skip(1) {
        if announced {
            return ConversationVerdict::invalid(index, "message after Announce");
        }
        if msg.in_reply_to != Some(offer.id) {
            return ConversationVerdict::invalid(index, "inReplyTo does not reference the offer");
        }
        match msg.kind {
            NotificationKind::Offer => {
                return ConversationVerdict::invalid(index, "second Offer in conversation");
            }
            NotificationKind::Accept | NotificationKind::TentativeAccept => accepted = true,
            NotificationKind::Reject => {}
            NotificationKind::Announce => {
                if !accepted {
                    return ConversationVerdict::invalid(
                        index,
                        "Announce without a prior Accept or TentativeAccept",
                    );
                }
                announced = true;
            }
        }
    }
    ConversationVerdict::Valid
}

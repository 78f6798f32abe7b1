//! Notification wire format for the mention-validation conversation:
//! construction, canonical serialization, parsing and conversation checks.

mod build;
mod codec;
mod conversation;
mod error;
mod ids;
mod payload;
mod report;

pub use build::{build_announce, build_offer, build_response, build_tentative_accept, Verdict};
pub use codec::{parse_payload, serialize_payload, MEDIA_TYPE};
pub use conversation::{validate_conversation, ConversationVerdict};
pub use error::NotifyError;
pub use ids::{FixedIds, IdSource, MalformedUrn, NotificationId, RandomIds, SeededIds};
pub use payload::{
    canonical_context, ActorKind, ActorRef, Confidence, ConfidenceOutOfRange, MentionDescriptor,
    MentionType, NotificationKind, NotificationPayload, ServiceEndpoint, SoftwareCitation,
    ACTIVITYSTREAMS_CONTEXT, COAR_NOTIFY_ALT_CONTEXT, COAR_NOTIFY_CONTEXT, CODEMETA_CONTEXT,
    RELATIONSHIP_ACTION, SOFTWARE_SOURCE_CODE,
};
pub use report::{ValidationReport, Violation};

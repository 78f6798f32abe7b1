use super::payload::NotificationKind;
use super::report::ValidationReport;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NotifyError {
    #[error("invalid mention: {0}")]
    InvalidMention(ValidationReport),
    #[error("origin and target are the same service: {0}")]
    SelfAddressed(String),
    #[error("expected an Offer, got {0}")]
    NotAnOffer(NotificationKind),
    #[error("payload violates invariants: {0}")]
    InvariantViolation(ValidationReport),
}

//! The protocol roles and the simulated authors that drive them.

mod aggregator;
mod archive;
mod authors;
mod mail;
mod repository;

pub use aggregator::{
    Aggregator, AggregatorConfig, ApproveError, ApproveOutcome, PidDisposition, PidError,
    RepositoryRoute, ResponseEffect, ResponseError,
};
pub use archive::{mint_pid, Archive, RegistrationRequest, RegistrationResult};
pub use authors::{
    ActionTally, AuthorAgents, AuthorScript, EditTransform, ScriptBook, ScriptParseError,
    ScriptPolicy,
};
pub use mail::{subject_for, AuthorAction, AuthorMessage, MailChannel, MessageMention};
pub use repository::{
    ActionError, ActionOutcome, Catalogue, OfferDisposition, Paper, PidNotice, RegistrationError,
    Repository, RepositoryConfig, RevocationBody, TickReport,
};

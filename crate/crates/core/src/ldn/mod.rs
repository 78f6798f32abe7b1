//! Linked-data-notification transport: an HTTP inbox that stores and hands
//! over notifications exactly once, and a retrying delivery client.

mod client;
mod server;

pub use client::{Deliverer, DeliveryOutcome, DeliveryReceipt, Exchange, RetryPolicy};
pub use server::{
    inbox_router, serve, Collect, Inbox, InboxConsumer, InboxEntry, InboxOpenError, Receipt,
    ReceiveError, ServerHandle,
};

/// Link relation advertising an inbox.
pub const INBOX_REL: &str = "http://www.w3.org/ns/ldp#inbox";

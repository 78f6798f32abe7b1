#![allow(dead_code)]

use std::path::PathBuf;

use mention_notify::notify::{
    build_announce, build_offer, ActorKind, ActorRef, Confidence, FixedIds, MentionDescriptor,
    MentionType, NotificationId, NotificationPayload, ServiceEndpoint, SoftwareCitation,
    COAR_NOTIFY_ALT_CONTEXT,
};

pub const OFFER_ID: &str = "urn:uuid:0370c0fb-bb78-4a9b-87f5-bed307a509dd";
pub const ANNOUNCE_ID: &str = "urn:uuid:94ecae35-dcf4-4182-8550-22c7164fe23f";

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap()
}

pub fn id(s: &str) -> NotificationId {
    s.parse().unwrap()
}

pub fn sample_mention() -> MentionDescriptor {
    MentionDescriptor {
        record_id: "https://research-organisation.org/repository/record/201203/421/".into(),
        cite_as: Some("https://doi.org/10.5555/12345680".into()),
        citation: SoftwareCitation::new("SoFAIR")
            .with_reference_publication("https://doi.org/10.1016/j.procs.2012.04.202"),
        confidence: Confidence::new(99.0).unwrap(),
        mention_type: MentionType::Used,
        context: "In this paper, we present the software X vY (http://sw/link)".into(),
    }
}

pub fn repository_manager() -> ActorRef {
    ActorRef::new(
        "mailto:library@repo.com",
        "Repository manager",
        ActorKind::Person,
    )
}

pub fn core_service() -> ActorRef {
    ActorRef::new(
        "https://review-service.com/system",
        "CORE",
        ActorKind::Service,
    )
}

pub fn repository_endpoint() -> ServiceEndpoint {
    ServiceEndpoint::new(
        "https://research-organisation.org/repository",
        "https://research-organisation.org/inbox/",
    )
}

pub fn review_endpoint() -> ServiceEndpoint {
    ServiceEndpoint::new(
        "https://review-service.com/system",
        "https://review-service.com/inbox/",
    )
}

/// Independent replay of a registry log: final state name per record key,
/// computed from the raw JSON lines without touching the registry code.
pub fn replay_states(log_text: &str) -> std::collections::BTreeMap<String, String> {
    let mut states = std::collections::BTreeMap::new();
    for line in log_text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let key = v["record_key"].as_str().unwrap().to_string();
        let next = match v["event"].as_str().unwrap() {
            "ingested" => "ready",
            "offer_sent" => "sent",
            "response_received" => "responded",
            "announced" => "announced",
            "cancelled" => "cancelled",
            "pid_assigned" => continue,
            other => panic!("unexpected event {other}"),
        };
        states.insert(key, next.to_string());
    }
    states
}

pub fn count_states(
    states: &std::collections::BTreeMap<String, String>,
) -> std::collections::BTreeMap<String, usize> {
    let mut counts = std::collections::BTreeMap::new();
    for s in ["ready", "sent", "responded", "announced", "cancelled"] {
        counts.insert(s.to_string(), 0);
    }
    for s in states.values() {
        *counts.get_mut(s).unwrap() += 1;
    }
    counts
}

pub fn corpus() -> Vec<mention_notify::registry::MentionDraft> {
    mention_notify::registry::load_corpus(&fixture_path("corpus.json")).unwrap()
}

pub fn sample_offer() -> NotificationPayload {
    build_offer(
        sample_mention(),
        repository_manager(),
        repository_endpoint(),
        review_endpoint(),
        &mut FixedIds::new([id(OFFER_ID)]),
    )
    .unwrap()
}

/// The fixture announce as built by the announce path, before the two
/// fixture-specific overrides are applied.
pub fn announce_as_built() -> NotificationPayload {
    build_announce(
        &sample_offer(),
        core_service(),
        review_endpoint(),
        repository_endpoint(),
        &mut FixedIds::new([id(ANNOUNCE_ID)]),
    )
    .unwrap()
}

pub fn sample_announce() -> NotificationPayload {
    let mut p = announce_as_built();
    p.context[1] = COAR_NOTIFY_ALT_CONTEXT.to_string();
    p.conversation_context =
        Some("https://research-organisation.org/repository/preprint/201203/421/".into());
    p
}

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::panic::AssertUnwindSafe;
use std::pin::Pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use common::*;
use mention_notify::actors::{
    AuthorAction, Catalogue, MailChannel, Repository, RepositoryConfig, ScriptBook,
};
use mention_notify::clock::ManualClock;
use mention_notify::ldn::{
    inbox_router, serve, Deliverer, Inbox, InboxConsumer, InboxEntry, RetryPolicy,
};
use mention_notify::notify::{
    build_offer, parse_payload, serialize_payload, validate_conversation, ActorKind, ActorRef,
    Confidence, ConversationVerdict, IdSource, NotificationKind, NotificationPayload, SeededIds,
    ServiceEndpoint,
};
use mention_notify::registry::{
    MentionDraft, MentionState, Registry, RegistryError, RegistryEvent, ResponseKind,
};
use mention_notify::sim::{Role, RunConfig, Simulation, REGISTRY_LOG};
use serde_json::Value;

type Check = Result<(), String>;
type Criterion = fn() -> Pin<Box<dyn Future<Output = Check>>>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    let criteria: [(&str, Criterion); 8] = [
        ("fixture fidelity", || Box::pin(fixture_fidelity())),
        ("end-to-end happy path", || Box::pin(happy_path())),
        ("reject path", || Box::pin(reject_path())),
        ("threshold gating", || Box::pin(threshold_gating())),
        ("idempotent receive", || Box::pin(idempotent_receive())),
        ("state-machine oracle", || Box::pin(state_machine())),
        ("dashboard card counts", || Box::pin(dashboard_cards())),
        ("conversation validator", || Box::pin(conversations())),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| rt.block_on(run())))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {} {name} ({secs:.2}s)", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.2}s): {why}", n + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn config(dir: &std::path::Path, script: &str) -> RunConfig {
    let mut cfg = RunConfig::new(fixture_path("corpus.json"), dir.join("state"));
    cfg.scripts = ScriptBook::uniform(script.parse().unwrap());
    cfg
}

fn payloads(inbox: &Inbox) -> Vec<NotificationPayload> {
    inbox.entries().into_iter().map(|e| e.payload).collect()
}

fn threads(sim: &Simulation) -> BTreeMap<String, Vec<NotificationPayload>> {
    let mut out: BTreeMap<String, Vec<NotificationPayload>> = BTreeMap::new();
    for offer in payloads(sim.repository().inbox()) {
        out.entry(offer.id.to_string()).or_default().push(offer);
    }
    for inbox in [sim.aggregator().inbox(), sim.archive().inbox()] {
        for p in payloads(inbox) {
            let parent = p.in_reply_to.map(|i| i.to_string()).unwrap_or_default();
            out.entry(parent).or_default().push(p);
        }
    }
    out
}

async fn fixture_fidelity() -> Check {
    let started = Instant::now();
    for (built, name) in [
        (sample_offer(), "offer.json"),
        (sample_announce(), "announce.json"),
    ] {
        let fixture = fixture(name);
        let bytes = serialize_payload(&built).map_err(|e| e.to_string())?;
        let ours: Value = serde_json::from_slice(&bytes).unwrap();
        let theirs: Value = serde_json::from_slice(&fixture).unwrap();
        ensure!(
            ours == theirs,
            "{name}: serialized payload differs from the fixture"
        );
        let squash = |b: &[u8]| -> String {
            serde_json::to_string(&serde_json::from_slice::<Value>(b).unwrap()).unwrap()
        };
        ensure!(
            squash(&bytes) == squash(&fixture),
            "{name}: normalized text differs"
        );
        let parsed = parse_payload(&fixture).map_err(|e| format!("{name}: {e}"))?;
        ensure!(
            parsed == built,
            "{name}: parsed fixture differs from the constructed payload"
        );
    }
    ensure!(
        started.elapsed() < Duration::from_secs(1),
        "took {:?}",
        started.elapsed()
    );
    Ok(())
}

async fn happy_path() -> Check {
    let pid_shape = regex::Regex::new("^swh:1:dir:[0-9a-f]{40}$").unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), "always_validate");
        cfg.policy.auto_send = true;
        cfg.policy.high_confidence_only = false;
        let started = Instant::now();
        let sim = Simulation::start(cfg, true)
            .await
            .map_err(|e| e.to_string())?;
        let report = sim.run_to_quiescence().await;
        let elapsed = started.elapsed();
        ensure!(
            report.quiescent,
            "no quiescence after {} sweeps",
            report.sweeps
        );
        ensure!(elapsed < Duration::from_secs(30), "run took {elapsed:?}");

        let stats = sim.stats();
        ensure!(
            stats.states.get(MentionState::Announced) == 20,
            "announced:\n{stats}"
        );
        let sent: BTreeSet<_> = sim
            .registry()
            .records()
            .iter()
            .filter_map(|r| r.offer_id)
            .collect();
        ensure!(sent.len() == 20, "{} offers recorded", sent.len());
        let announces = payloads(sim.archive().inbox());
        ensure!(
            announces.len() == 20,
            "archive holds {} announces",
            announces.len()
        );
        for a in &announces {
            ensure!(
                a.kind == NotificationKind::Announce,
                "archive holds a {}",
                a.kind
            );
            ensure!(
                a.in_reply_to.is_some_and(|id| sent.contains(&id)),
                "announce {} does not thread to a sent offer",
                a.id
            );
        }
        let pids: Vec<String> = sim
            .registry()
            .records()
            .iter()
            .filter_map(|r| r.pid.as_ref().map(|p| p.to_string()))
            .collect();
        ensure!(pids.len() == 20, "{} pids", pids.len());
        ensure!(
            pids.iter().all(|p| pid_shape.is_match(p)),
            "malformed pid in {pids:?}"
        );
        runs.push((stats.to_string(), pids));
        sim.shutdown().await;
    }
    ensure!(
        runs[0].0.as_bytes() == runs[1].0.as_bytes(),
        "stats differ between runs"
    );
    ensure!(runs[0].1 == runs[1].1, "pids differ between runs");
    Ok(())
}

async fn reject_path() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "always_reject");
    cfg.policy.auto_send = true;
    let sim = Simulation::start(cfg, true)
        .await
        .map_err(|e| e.to_string())?;
    let report = sim.run_to_quiescence().await;
    ensure!(report.quiescent, "no quiescence");
    let records = sim.registry().records();
    ensure!(records.len() == 20, "{} records", records.len());
    for r in &records {
        ensure!(
            r.state == MentionState::Responded && r.response_kind == Some(ResponseKind::Rejected),
            "{} is {} {:?}",
            r.key,
            r.state,
            r.response_kind
        );
        ensure!(r.pid.is_none(), "{} has a pid", r.key);
        let rejected_at = r
            .event_log
            .iter()
            .position(|e| e.event == "response_received");
        let announced_at = r.event_log.iter().position(|e| e.event == "announced");
        ensure!(
            rejected_at.is_some() && announced_at.is_none(),
            "{} log: {:?}",
            r.key,
            r.event_log
        );
    }
    let announces: usize = threads(&sim)
        .values()
        .map(|t| {
            t.iter()
                .filter(|p| p.kind == NotificationKind::Announce)
                .count()
        })
        .sum();
    ensure!(announces == 0, "{announces} announces");
    ensure!(
        sim.archive().request_count() == 0,
        "archive received registrations"
    );
    for (offer, thread) in threads(&sim) {
        ensure!(
            validate_conversation(&thread).is_valid(),
            "conversation {offer} invalid"
        );
        let after_reject = thread
            .iter()
            .skip_while(|p| p.kind != NotificationKind::Reject)
            .any(|p| p.kind == NotificationKind::Announce);
        ensure!(!after_reject, "announce after reject in {offer}");
    }
    sim.shutdown().await;
    Ok(())
}

fn confidence_drafts(values: &[f64]) -> Vec<MentionDraft> {
    let base = corpus()[0].clone();
    values
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut d = base.clone();
            d.descriptor.context = format!("mention {i}");
            d.descriptor.confidence = Confidence::new(*c).unwrap();
            d
        })
        .collect()
}

async fn threshold_gating() -> Check {
    for (high_only, want) in [(true, vec![90.0, 99.45]), (false, vec![85.0, 90.0, 99.45])] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), "ignore_all");
        cfg.policy.auto_send = true;
        cfg.policy.high_confidence_only = high_only;
        cfg.policy.threshold = 90.0;
        let sim = Simulation::start_with(cfg, confidence_drafts(&[99.45, 90.0, 85.0]), true)
            .await
            .map_err(|e| e.to_string())?;
        sim.run_to_quiescence().await;
        let mut offered: Vec<f64> = payloads(sim.repository().inbox())
            .iter()
            .map(|o| o.object.confidence.value())
            .collect();
        offered.sort_by(f64::total_cmp);
        ensure!(
            offered == want,
            "high_confidence_only={high_only}: offered {offered:?}"
        );
        sim.shutdown().await;
    }
    Ok(())
}

struct Counting {
    repo: Arc<Repository>,
    calls: AtomicUsize,
}

#[async_trait]
impl InboxConsumer for Counting {
    async fn consume(&self, entry: &InboxEntry) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let _ = self.repo.on_offer(&entry.payload);
    }
}

async fn idempotent_receive() -> Check {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}/", listener.local_addr().unwrap());
    let endpoint = ServiceEndpoint::new(base.clone(), format!("{base}inbox/"));
    let clock = Arc::new(ManualClock::fixed());
    let inbox = Arc::new(Inbox::new(
        url::Url::parse(&endpoint.inbox).unwrap(),
        clock.clone(),
    ));
    let repo = Arc::new(Repository::new(
        RepositoryConfig {
            endpoint: endpoint.clone(),
            actor: ActorRef::new(base.clone(), "Repository", ActorKind::Service),
            institution_domain: "open.ac.uk".into(),
            max_recipients: 1,
            archive_register_url: format!("{base}register"),
            action_base: format!("{base}actions/"),
            seed: 5,
        },
        Catalogue::from_drafts(&corpus()),
        inbox.clone(),
        Arc::new(MailChannel::new(None)),
        Deliverer::new(RetryPolicy::default(), 0),
    ));
    let counting = Arc::new(Counting {
        repo: repo.clone(),
        calls: AtomicUsize::new(0),
    });
    let server = serve(listener, inbox_router(inbox.clone(), counting.clone()))
        .map_err(|e| e.to_string())?;

    let offer = build_offer(
        corpus()[0].descriptor.clone(),
        ActorRef::new("http://aggregator.test/", "Aggregator", ActorKind::Service),
        ServiceEndpoint::new("http://aggregator.test/", "http://aggregator.test/inbox/"),
        endpoint.clone(),
        &mut SeededIds::new(77),
    )
    .map_err(|e| e.to_string())?;
    let body = serialize_payload(&offer).unwrap();
    let http = reqwest::Client::new();
    let mut locations = BTreeSet::new();
    for i in 0..5 {
        let resp = http
            .post(endpoint.inbox.as_str())
            .header("content-type", "application/ld+json")
            .body(body.clone())
            .send()
            .await
            .map_err(|e| e.to_string())?;
        ensure!(resp.status() == 201, "POST {i} returned {}", resp.status());
        let location = resp
            .headers()
            .get("location")
            .map(|v| v.to_str().unwrap().to_string());
        locations.insert(location.ok_or("missing Location")?);
    }
    repo.flush_mail();
    let calls = counting.calls.load(Ordering::SeqCst);
    server.shutdown().await;
    ensure!(locations.len() == 1, "locations {locations:?}");
    ensure!(inbox.len() == 1, "{} stored entries", inbox.len());
    ensure!(
        repo.mail().len() == 1,
        "{} author messages",
        repo.mail().len()
    );
    ensure!(calls == 1, "{calls} consumer invocations");
    Ok(())
}

async fn state_machine() -> Check {
    // Committed table: one row per state, one column per event.
    let text = String::from_utf8(fixture("transitions.csv")).unwrap();
    let mut rows = text.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    ensure!(
        header[1..]
            == [
                "offer_sent",
                "response_received",
                "announced",
                "manager_cancelled"
            ],
        "unexpected header {header:?}"
    );
    let mut checked = 0;
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        for (event_name, want) in header[1..].iter().zip(&cells[1..]) {
            let (registry, key) = situated(cells[0]);
            let before = registry.get(&key).unwrap();
            let event = match *event_name {
                "offer_sent" => RegistryEvent::OfferSent(SeededIds::new(99).next_id()),
                "response_received" => RegistryEvent::ResponseReceived {
                    kind: ResponseKind::Validated,
                    edited: None,
                },
                "announced" => RegistryEvent::Announced(None),
                _ => RegistryEvent::ManagerCancelled,
            };
            let got = registry.transition(&key, event);
            match (*want, got) {
                ("-", Err(RegistryError::IllegalTransition { .. })) => {
                    ensure!(
                        registry.get(&key).unwrap() == before,
                        "{} + {event_name} changed the record",
                        cells[0]
                    );
                }
                (w, Ok(s)) if w == s.as_str() => {}
                (w, g) => {
                    return Err(format!(
                        "{} + {event_name}: table says {w}, got {g:?}",
                        cells[0]
                    ))
                }
            }
            checked += 1;
        }
    }
    ensure!(checked >= 20, "only {checked} cells");

    // Crash mid-run, then replay the log.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "probabilistic(0.4,0.2,0.2)");
    cfg.policy.auto_send = true;
    let sim = Simulation::start(cfg, true)
        .await
        .map_err(|e| e.to_string())?;
    for _ in 0..2 {
        sim.sweep().await;
    }
    let live: BTreeMap<&str, usize> = sim
        .registry()
        .tally_by_state()
        .iter()
        .map(|(s, n)| (s.as_str(), n))
        .collect();
    let moved = live["ready"] < 20 && live["ready"] + live["sent"] < 20;
    ensure!(moved, "run did not get far enough: {live:?}");
    let log = dir.path().join("state").join(REGISTRY_LOG);
    let crashed = dir.path().join("crashed.log");
    let mut bytes = std::fs::read(&log).unwrap();
    let complete_lines = bytes.iter().filter(|b| **b == b'\n').count();
    bytes.extend_from_slice(br#"{"seq":999,"ts":"2025-01-01T00:0"#);
    std::fs::write(&crashed, &bytes).unwrap();
    drop(sim);

    let clock = Arc::new(ManualClock::fixed());
    let (recovered, corrupt) =
        Registry::recover(&crashed, clock.clone()).map_err(|e| e.to_string())?;
    ensure!(
        corrupt.as_ref().map(|c| c.line) == Some(complete_lines + 1),
        "torn line reported as {corrupt:?}"
    );
    let replayed: BTreeMap<&str, usize> = recovered
        .tally_by_state()
        .iter()
        .map(|(s, n)| (s.as_str(), n))
        .collect();
    ensure!(replayed == live, "recovered {replayed:?}, live {live:?}");
    let reopened = Registry::open(&log, clock).map_err(|e| e.to_string())?;
    let reopened: BTreeMap<&str, usize> = reopened
        .tally_by_state()
        .iter()
        .map(|(s, n)| (s.as_str(), n))
        .collect();
    ensure!(reopened == live, "reopened {reopened:?}, live {live:?}");
    let intact =
        String::from_utf8_lossy(&bytes[..bytes.iter().rposition(|b| *b == b'\n').unwrap() + 1]);
    let scanned = count_states(&replay_states(&intact));
    for (state, n) in &live {
        ensure!(
            scanned[*state] == *n,
            "{state}: independent scan {} vs {n}",
            scanned[*state]
        );
    }
    Ok(())
}

fn situated(state: &str) -> (Registry, mention_notify::registry::MentionKey) {
    let registry = Registry::new(Arc::new(ManualClock::fixed()));
    let draft = corpus()[0].clone();
    let key = draft.key();
    registry.ingest(&[draft]).unwrap();
    let offer = RegistryEvent::OfferSent(SeededIds::new(1).next_id());
    let respond = |kind| RegistryEvent::ResponseReceived { kind, edited: None };
    let steps = match state {
        "ready" => vec![],
        "sent" => vec![offer],
        "responded" => vec![offer, respond(ResponseKind::Validated)],
        "responded_rejected" => vec![offer, respond(ResponseKind::Rejected)],
        "announced" => vec![
            offer,
            respond(ResponseKind::Validated),
            RegistryEvent::Announced(None),
        ],
        "cancelled" => vec![RegistryEvent::ManagerCancelled],
        other => panic!("unknown state {other}"),
    };
    for e in steps {
        registry.transition(&key, e).unwrap();
    }
    (registry, key)
}

async fn dashboard_cards() -> Check {
    // 23 ready, 6 waiting, 3 answered: 32 records, 9 approved, 3 answers.
    let base = corpus();
    let drafts: Vec<MentionDraft> = (0..32)
        .map(|i| {
            let mut d = base[i % base.len()].clone();
            d.descriptor.context = format!("{} #{i}", d.descriptor.context);
            d
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let sim = Simulation::start_with(config(dir.path(), "ignore_all"), drafts, true)
        .await
        .map_err(|e| e.to_string())?;
    let api = sim.url(Role::Dashboard).clone();
    let http = reqwest::Client::new();
    let get = |path: &str| {
        let url = api.join(path).unwrap();
        let http = http.clone();
        async move {
            let bytes = http.get(url).send().await.unwrap().bytes().await.unwrap();
            serde_json::from_slice::<Value>(&bytes).unwrap()
        }
    };

    let page = get("api/mentions?state=ready&page_size=9").await;
    for row in page["rows"].as_array().unwrap() {
        let url = api
            .join(&format!(
                "api/mentions/{}/approve",
                row["key"].as_str().unwrap()
            ))
            .unwrap();
        let resp = http.post(url).send().await.unwrap();
        ensure!(resp.status() == 200, "approve returned {}", resp.status());
    }
    sim.repository().tick().await;
    let mentions: Vec<_> = sim
        .mail()
        .messages()
        .into_iter()
        .flat_map(|m| {
            m.mentions
                .iter()
                .map(|x| m.action_url(&x.tokens[&AuthorAction::Validate]))
                .collect::<Vec<_>>()
        })
        .collect();
    ensure!(mentions.len() == 9, "{} mentions mailed", mentions.len());
    for url in &mentions[..3] {
        let resp = http
            .post(url.as_str())
            .header("content-type", "application/json")
            .body(r#"{"action":"validate"}"#)
            .send()
            .await
            .unwrap();
        ensure!(resp.status() == 200, "validate returned {}", resp.status());
    }
    sim.sweep().await;

    let tallies = get("api/tallies").await;
    let card = |q: &str| tallies["queues"][q].as_u64().unwrap_or(u64::MAX) as usize;
    ensure!(
        (card("ready"), card("sent"), card("responded")) == (23, 6, 3),
        "cards {}",
        tallies["queues"]
    );
    let log = std::fs::read_to_string(dir.path().join("state").join(REGISTRY_LOG)).unwrap();
    let scanned = count_states(&replay_states(&log));
    for (state, n) in &scanned {
        let api_n = tallies["states"][state.as_str()]
            .as_u64()
            .unwrap_or(u64::MAX) as usize;
        ensure!(api_n == *n, "{state}: api {api_n}, log replay {n}");
    }
    ensure!(
        scanned["responded"] + scanned["announced"] == card("responded"),
        "responded card disagrees with replay"
    );
    sim.shutdown().await;
    Ok(())
}

async fn conversations() -> Check {
    let offer = sample_offer();
    let mut ids = SeededIds::new(3);
    let text = String::from_utf8(fixture("conversations.csv")).unwrap();
    let mut checked = 0;
    for row in text.lines().skip(1) {
        let (word, verdict) = row.split_once(',').unwrap();
        let word = if word == "-" { "" } else { word };
        let thread: Vec<NotificationPayload> = word
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let mut p = offer.clone();
                p.kind = match c {
                    'O' => NotificationKind::Offer,
                    'A' => NotificationKind::Accept,
                    'T' => NotificationKind::TentativeAccept,
                    'R' => NotificationKind::Reject,
                    _ => NotificationKind::Announce,
                };
                if i > 0 || c != 'O' {
                    p.id = ids.next_id();
                    p.in_reply_to = Some(offer.id);
                }
                p
            })
            .collect();
        let got = match validate_conversation(&thread) {
            ConversationVerdict::Valid => "valid".to_string(),
            ConversationVerdict::Invalid { index, .. } => format!("invalid@{index}"),
        };
        ensure!(
            got == verdict,
            "{word:?}: table says {verdict}, validator says {got}"
        );
        checked += 1;
    }
    ensure!(checked == 1 + 5 + 25 + 125, "{checked} sequences");
    Ok(())
}

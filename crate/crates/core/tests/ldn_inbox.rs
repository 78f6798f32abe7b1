mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use common::*;
use mention_notify::clock::ManualClock;
use mention_notify::ldn::{
    inbox_router, serve, Deliverer, DeliveryOutcome, Inbox, InboxConsumer, InboxEntry, RetryPolicy,
    ServerHandle, INBOX_REL,
};
use mention_notify::notify::{
    build_offer, parse_payload, serialize_payload, NotificationPayload, SeededIds, MEDIA_TYPE,
};
use tokio::net::TcpListener;
use url::Url;

#[derive(Default)]
struct Counter(AtomicUsize);

#[async_trait]
impl InboxConsumer for Counter {
    async fn consume(&self, _entry: &InboxEntry) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

async fn start(store: Option<&std::path::Path>) -> (ServerHandle, Arc<Inbox>, Arc<Counter>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let url = Url::parse(&format!("http://{addr}/inbox/")).unwrap();
    let clock = Arc::new(ManualClock::fixed());
    let inbox = Arc::new(match store {
        Some(p) => Inbox::open(url, p, clock).unwrap(),
        None => Inbox::new(url, clock),
    });
    let counter = Arc::new(Counter::default());
    let router = inbox_router(inbox.clone(), counter.clone());
    (serve(listener, router).unwrap(), inbox, counter)
}

fn http() -> reqwest::Client {
    reqwest::Client::new()
}

async fn post_ld(url: &str, body: Vec<u8>) -> reqwest::Response {
    http()
        .post(url)
        .header("content-type", MEDIA_TYPE)
        .body(body)
        .send()
        .await
        .unwrap()
}

async fn json(resp: reqwest::Response) -> serde_json::Value {
    serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap()
}

fn offer(seed: u64) -> NotificationPayload {
    build_offer(
        sample_mention(),
        repository_manager(),
        review_endpoint(),
        repository_endpoint(),
        &mut SeededIds::new(seed),
    )
    .unwrap()
}

fn inbox_url(h: &ServerHandle) -> String {
    format!("{}inbox/", h.base_url())
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay: Duration::from_millis(5),
        jitter: false,
    }
}

#[tokio::test]
async fn repeated_post_is_idempotent() {
    let (h, inbox, counter) = start(None).await;
    let body = fixture("offer.json");
    let mut locations = Vec::new();
    for _ in 0..5 {
        let resp = post_ld(&inbox_url(&h), body.clone()).await;
        assert_eq!(resp.status(), StatusCode::CREATED);
        locations.push(resp.headers()["location"].to_str().unwrap().to_string());
    }
    assert!(locations.iter().all(|l| l == &locations[0]));
    assert!(locations[0].ends_with("/inbox/0370c0fb-bb78-4a9b-87f5-bed307a509dd"));
    assert_eq!(inbox.len(), 1);
    assert_eq!(counter.0.load(Ordering::SeqCst), 1);
    h.shutdown().await;
}

#[tokio::test]
async fn duplicates_are_recognised_by_id_not_bytes() {
    let (h, inbox, counter) = start(None).await;
    let pretty = fixture("offer.json");
    let compact =
        serde_json::to_vec(&serde_json::from_slice::<serde_json::Value>(&pretty).unwrap()).unwrap();
    assert_ne!(pretty, compact);
    post_ld(&inbox_url(&h), pretty.clone()).await;
    post_ld(&inbox_url(&h), compact).await;
    assert_eq!(inbox.len(), 1);
    assert_eq!(counter.0.load(Ordering::SeqCst), 1);
    assert_eq!(inbox.entries()[0].raw_bytes, pretty);
    h.shutdown().await;
}

#[tokio::test]
async fn empty_object_is_rejected_with_missing_keys() {
    let (h, inbox, counter) = start(None).await;
    let resp = post_ld(&inbox_url(&h), b"{}".to_vec()).await;
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let report = json(resp).await;
    let paths: Vec<&str> = report["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["path"].as_str().unwrap())
        .collect();
    for key in [
        "@context", "id", "type", "actor", "object", "origin", "target",
    ] {
        assert!(paths.contains(&key), "{key} not in {paths:?}");
    }
    assert!(inbox.is_empty());
    assert_eq!(counter.0.load(Ordering::SeqCst), 0);
    h.shutdown().await;
}

#[tokio::test]
async fn garbage_and_wrong_media_type() {
    let (h, inbox, _) = start(None).await;
    let resp = post_ld(&inbox_url(&h), vec![0xff, 0x00, b'{']).await;
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let resp = http()
        .post(inbox_url(&h))
        .header("content-type", "text/plain")
        .body(fixture("offer.json"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let resp = http()
        .post(inbox_url(&h))
        .body(fixture("offer.json"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);

    let resp = http()
        .post(inbox_url(&h))
        .header(
            "content-type",
            "application/ld+json; profile=\"https://www.w3.org/ns/activitystreams\"",
        )
        .body(fixture("offer.json"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    assert_eq!(inbox.len(), 1);
    h.shutdown().await;
}

#[tokio::test]
async fn listing_and_entries() {
    let (h, _, _) = start(None).await;
    let listing = json(http().get(inbox_url(&h)).send().await.unwrap()).await;
    assert_eq!(listing["contains"], serde_json::json!([]));

    let mut expected = Vec::new();
    for seed in [3, 1, 2] {
        let resp = post_ld(&inbox_url(&h), serialize_payload(&offer(seed)).unwrap()).await;
        expected.push(resp.headers()["location"].to_str().unwrap().to_string());
    }
    let listing = json(http().get(inbox_url(&h)).send().await.unwrap()).await;
    assert_eq!(listing["contains"], serde_json::json!(expected));

    let announce = fixture("announce.json");
    let resp = post_ld(&inbox_url(&h), announce.clone()).await;
    let location = resp.headers()["location"].to_str().unwrap().to_string();
    let got = http().get(&location).send().await.unwrap();
    assert_eq!(got.status(), StatusCode::OK);
    assert_eq!(got.headers()["content-type"], MEDIA_TYPE);
    assert_eq!(got.bytes().await.unwrap().to_vec(), announce);

    let missing = format!("{}inbox/{}", h.base_url(), uuid::Uuid::new_v4());
    assert_eq!(
        http().get(missing).send().await.unwrap().status(),
        StatusCode::NOT_FOUND
    );
    h.shutdown().await;
}

#[tokio::test]
async fn root_advertises_the_inbox() {
    let (h, _, _) = start(None).await;
    let d = Deliverer::new(RetryPolicy::default(), 0);
    assert_eq!(d.discover(h.base_url().as_str()).await, Some(inbox_url(&h)));
    let resp = http().get(h.base_url()).send().await.unwrap();
    assert!(resp.headers()["link"].to_str().unwrap().contains(INBOX_REL));
    h.shutdown().await;
}

#[tokio::test]
async fn entries_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("inbox.ndjson");
    let (h, _, _) = start(Some(&store)).await;
    for seed in 0..3 {
        post_ld(&inbox_url(&h), serialize_payload(&offer(seed)).unwrap()).await;
    }
    post_ld(&inbox_url(&h), fixture("announce.json")).await;
    let before = json(http().get(inbox_url(&h)).send().await.unwrap()).await;
    let addr = h.addr();
    h.shutdown().await;

    // Same address, fresh process state.
    let listener = TcpListener::bind(addr).await.unwrap();
    let url = Url::parse(&format!("http://{addr}/inbox/")).unwrap();
    let inbox = Arc::new(Inbox::open(url, &store, Arc::new(ManualClock::fixed())).unwrap());
    let counter = Arc::new(Counter::default());
    let h = serve(listener, inbox_router(inbox.clone(), counter.clone())).unwrap();
    let after = json(http().get(inbox_url(&h)).send().await.unwrap()).await;
    assert_eq!(before, after);
    let last = after["contains"][3].as_str().unwrap();
    let body = http()
        .get(last)
        .send()
        .await
        .unwrap()
        .bytes()
        .await
        .unwrap();
    assert_eq!(body.to_vec(), fixture("announce.json"));

    // A redelivery after restart is still a duplicate.
    let resp = post_ld(&inbox_url(&h), serialize_payload(&offer(0)).unwrap()).await;
    assert_eq!(resp.status(), StatusCode::CREATED);
    assert_eq!(counter.0.load(Ordering::SeqCst), 0);
    assert_eq!(inbox.len(), 4);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_duplicates_are_consumed_once() {
    let (h, inbox, counter) = start(None).await;
    let body = serialize_payload(&offer(11)).unwrap();
    let url = inbox_url(&h);
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (url, body) = (url.clone(), body.clone());
            tokio::spawn(async move { post_ld(&url, body).await.status() })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    assert_eq!(inbox.len(), 1);
    assert_eq!(counter.0.load(Ordering::SeqCst), 1);
    h.shutdown().await;
}

/// A target answering with a scripted sequence of statuses, 201 afterwards.
async fn scripted_target(
    script: Vec<u16>,
) -> (ServerHandle, Arc<parking_lot::Mutex<Vec<Vec<u8>>>>) {
    let seen = Arc::new(parking_lot::Mutex::new(Vec::new()));
    let log = seen.clone();
    let router = Router::new().route(
        "/inbox/",
        post(move |body: axum::body::Bytes| {
            let log = log.clone();
            let script = script.clone();
            async move {
                let n = {
                    let mut l = log.lock();
                    l.push(body.to_vec());
                    l.len()
                };
                let code = script.get(n - 1).copied().unwrap_or(201);
                let status = StatusCode::from_u16(code).unwrap();
                (status, [("location", "http://target.example/inbox/1")])
            }
        }),
    );
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    (serve(listener, router).unwrap(), seen)
}

fn aimed_at(h: &ServerHandle, seed: u64) -> NotificationPayload {
    let mut p = offer(seed);
    p.target.inbox = inbox_url(h);
    p
}

#[tokio::test]
async fn healthy_target_delivers_first_time() {
    let (h, _, counter) = start(None).await;
    let p = aimed_at(&h, 1);
    let r = Deliverer::new(fast_retry(5), 0).deliver(&p).await.unwrap();
    assert_eq!(r.outcome, DeliveryOutcome::Delivered);
    assert_eq!(r.attempts, 1);
    assert_eq!(r.notification_id, p.id);
    assert!(r.location.unwrap().ends_with(&p.id.simple()));
    assert_eq!(counter.0.load(Ordering::SeqCst), 1);
    h.shutdown().await;
}

#[tokio::test]
async fn flaky_target_succeeds_on_third_attempt() {
    let (h, seen) = scripted_target(vec![503, 500]).await;
    let p = aimed_at(&h, 2);
    let r = Deliverer::new(fast_retry(5), 0).deliver(&p).await.unwrap();
    assert_eq!(r.outcome, DeliveryOutcome::Delivered);
    assert_eq!(r.attempts, 3);
    assert_eq!(r.location.as_deref(), Some("http://target.example/inbox/1"));
    let bodies = seen.lock().clone();
    assert_eq!(bodies.len(), 3);
    assert!(bodies.iter().all(|b| b == &serialize_payload(&p).unwrap()));
    assert_eq!(parse_payload(&bodies[0]).unwrap(), p);
    h.shutdown().await;
}

#[tokio::test]
async fn client_error_is_terminal() {
    let (h, seen) = scripted_target(vec![400]).await;
    let r = Deliverer::new(fast_retry(5), 0)
        .deliver(&aimed_at(&h, 3))
        .await
        .unwrap();
    assert_eq!(r.outcome, DeliveryOutcome::GaveUp);
    assert_eq!(r.attempts, 1);
    assert_eq!(r.last_status, Some(400));
    assert!(r.location.is_none());
    assert_eq!(seen.lock().len(), 1);
    h.shutdown().await;
}

#[tokio::test]
async fn persistent_failure_gives_up_after_max_attempts() {
    let (h, seen) = scripted_target(vec![503; 10]).await;
    let retry = RetryPolicy {
        jitter: true,
        ..fast_retry(4)
    };
    let r = Deliverer::new(retry, 42)
        .deliver(&aimed_at(&h, 4))
        .await
        .unwrap();
    assert_eq!(r.outcome, DeliveryOutcome::GaveUp);
    assert_eq!(r.attempts, 4);
    assert_eq!(seen.lock().len(), 4);
    h.shutdown().await;
}

#[tokio::test]
async fn unreachable_target_gives_up() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut p = offer(5);
    p.target.inbox = format!("http://{addr}/inbox/");
    let r = Deliverer::new(fast_retry(3), 0).deliver(&p).await.unwrap();
    assert_eq!(r.outcome, DeliveryOutcome::GaveUp);
    assert_eq!(r.attempts, 3);
    assert!(r.last_status.is_none());
    assert!(r.error.is_some());
}

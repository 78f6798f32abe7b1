use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::header::{CONTENT_TYPE, LINK, LOCATION};
use serde::{Deserialize, Serialize};

use crate::notify::{
    serialize_payload, NotificationId, NotificationPayload, NotifyError, MEDIA_TYPE,
};

use super::INBOX_REL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Full jitter: each wait is drawn uniformly from `[0, delay]`.
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(50),
            jitter: false,
        }
    }
}

impl RetryPolicy {
    /// Wait after the given failed attempt (1-based), before jitter.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u32
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryOutcome {
    Delivered,
    GaveUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub target_inbox: String,
    pub notification_id: NotificationId,
    pub attempts: u32,
    pub outcome: DeliveryOutcome,
    pub location: Option<String>,
    /// Status of the final attempt, if a response arrived at all.
    pub last_status: Option<u16>,
    pub error: Option<String>,
}

impl DeliveryReceipt {
    pub fn delivered(&self) -> bool {
        self.outcome == DeliveryOutcome::Delivered
    }
}

/// Result of a POST driven through the retry loop.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub attempts: u32,
    pub status: Option<u16>,
    pub location: Option<String>,
    pub body: Vec<u8>,
    pub error: Option<String>,
}

impl Exchange {
    pub fn succeeded(&self) -> bool {
        self.status.is_some_and(|s| (200..300).contains(&s))
    }
}

/// HTTP sender with retry on connection failures and 5xx responses.
pub struct Deliverer {
    http: reqwest::Client,
    retry: RetryPolicy,
    rng: Mutex<ChaCha8Rng>,
}

impl Deliverer {
    pub fn new(retry: RetryPolicy, jitter_seed: u64) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .expect("http client builds");
        Self {
            http,
            retry,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(jitter_seed)),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// Posts the payload to its target's inbox.
    pub async fn deliver(
        &self,
        payload: &NotificationPayload,
    ) -> Result<DeliveryReceipt, NotifyError> {
        let inbox = payload.target.inbox.clone();
        self.deliver_to(&inbox, payload).await
    }

    pub async fn deliver_to(
        &self,
        inbox: &str,
        payload: &NotificationPayload,
    ) -> Result<DeliveryReceipt, NotifyError> {
        let body = serialize_payload(payload)?;
        let x = self.post(inbox, MEDIA_TYPE, body).await;
        let delivered = x.succeeded();
        Ok(DeliveryReceipt {
            target_inbox: inbox.to_string(),
            notification_id: payload.id,
            attempts: x.attempts,
            outcome: if delivered {
                DeliveryOutcome::Delivered
            } else {
                DeliveryOutcome::GaveUp
            },
            location: if delivered {
                Some(x.location.unwrap_or_else(|| inbox.to_string()))
            } else {
                None
            },
            last_status: x.status,
            error: x.error,
        })
    }

    /// POST with retries. 2xx ends the loop successfully, 4xx and 3xx end
    /// it immediately, connection errors and 5xx are retried.
    pub async fn post(&self, url: &str, content_type: &str, body: Vec<u8>) -> Exchange {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let sent = self
                .http
                .post(url)
                .header(CONTENT_TYPE, content_type)
                .body(body.clone())
                .send()
                .await;
            let (status, location, resp_body, error) = match sent {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let location = resp
                        .headers()
                        .get(LOCATION)
                        .and_then(|v| v.to_str().ok())
                        .map(str::to_string);
                    let bytes = resp.bytes().await.map(|b| b.to_vec()).unwrap_or_default();
                    (Some(status), location, bytes, None)
                }
                Err(e) => (None, None, Vec::new(), Some(e.to_string())),
            };
            let retryable = status.is_none_or(|s| s >= 500);
            if !retryable || attempt >= self.retry.max_attempts.max(1) {
                if !status.is_some_and(|s| (200..300).contains(&s)) {
                    tracing::warn!(url, attempt, ?status, error = ?error, "giving up");
                }
                return Exchange {
                    attempts: attempt,
                    status,
                    location,
                    body: resp_body,
                    error,
                };
            }
            tokio::time::sleep(self.wait(attempt)).await;
        }
    }

    fn wait(&self, attempt: u32) -> Duration {
        let delay = self.retry.delay_after(attempt);
        if self.retry.jitter && !delay.is_zero() {
            let nanos = delay.as_nanos().min(u64::MAX as u128) as u64;
            Duration::from_nanos(self.rng.lock().random_range(0..=nanos))
        } else {
            delay
        }
    }

    /// Looks up the inbox a resource advertises in its `Link` header.
    pub async fn discover(&self, resource: &str) -> Option<String> {
        let resp = self.http.get(resource).send().await.ok()?;
        let base = url::Url::parse(resource).ok()?;
        resp.headers()
            .get_all(LINK)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .flat_map(|v| v.split(','))
            .find_map(|link| inbox_from_link(link, &base))
    }
}

fn inbox_from_link(link: &str, base: &url::Url) -> Option<String> {
    let mut parts = link.split(';');
    let target = parts.next()?.trim().strip_prefix('<')?.strip_suffix('>')?;
    let is_inbox = parts.any(|p| {
        p.trim()
            .strip_prefix("rel=")
            .map(|r| r.trim_matches('"'))
            .is_some_and(|r| r.split_whitespace().any(|r| r == INBOX_REL))
    });
    is_inbox
        .then(|| base.join(target).ok().map(String::from))
        .flatten()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(10),
            jitter: false,
        };
        let waits: Vec<_> = (1..=4).map(|a| p.delay_after(a).as_millis()).collect();
        assert_eq!(waits, vec![10, 20, 40, 80]);
    }

    #[test]
    fn link_parsing() {
        let base = url::Url::parse("http://h:1/").unwrap();
        let l = format!("</inbox/>; rel=\"{INBOX_REL}\"");
        assert_eq!(
            inbox_from_link(&l, &base).as_deref(),
            Some("http://h:1/inbox/")
        );
        assert_eq!(inbox_from_link("</x>; rel=\"next\"", &base), None);
    }
}

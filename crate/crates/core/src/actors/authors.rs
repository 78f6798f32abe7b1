use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mail::{AuthorAction, AuthorMessage, MailChannel};
use crate::notify::{MentionDescriptor, NotificationId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptPolicy {
    AlwaysValidate,
    AlwaysReject,
    /// Answers with an edit; the edit itself counts as the validation.
    EditThenValidate,
    IgnoreAll,
    /// Weights for validate, edit and reject; what is left over is Ignore.
    Probabilistic {
        validate: f64,
        edit: f64,
        reject: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditTransform {
    AppendToName(String),
}

impl EditTransform {
    pub fn apply(&self, descriptor: &MentionDescriptor) -> MentionDescriptor {
        let mut d = descriptor.clone();
        match self {
            EditTransform::AppendToName(suffix) => d.citation.name.push_str(suffix),
        }
        d
    }
}

impl Default for EditTransform {
    fn default() -> Self {
        EditTransform::AppendToName(" v2".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthorScript {
    pub policy: ScriptPolicy,
    pub edit_transform: EditTransform,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad author script {0:?}")]
pub struct ScriptParseError(pub String);

impl AuthorScript {
    pub fn new(policy: ScriptPolicy) -> Self {
        Self {
            policy,
            edit_transform: EditTransform::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScriptParseError> {
        if let ScriptPolicy::Probabilistic {
            validate,
            edit,
            reject,
        } = self.policy
        {
            let ok = [validate, edit, reject]
                .iter()
                .all(|w| (0.0..=1.0).contains(w))
                && validate + edit + reject <= 1.0 + 1e-9;
            if !ok {
                return Err(ScriptParseError(self.to_string()));
            }
        }
        Ok(())
    }

    /// Picks an action. Only probabilistic scripts consume randomness.
    pub fn decide(&self, rng: &mut impl Rng) -> AuthorAction {
        match self.policy {
            ScriptPolicy::AlwaysValidate => AuthorAction::Validate,
            ScriptPolicy::AlwaysReject => AuthorAction::Reject,
            ScriptPolicy::EditThenValidate => AuthorAction::Edit,
            ScriptPolicy::IgnoreAll => AuthorAction::Ignore,
            ScriptPolicy::Probabilistic {
                validate,
                edit,
                reject,
            } => {
                let u: f64 = rng.random();
                if u < validate {
                    AuthorAction::Validate
                } else if u < validate + edit {
                    AuthorAction::Edit
                } else if u < validate + edit + reject {
                    AuthorAction::Reject
                } else {
                    AuthorAction::Ignore
                }
            }
        }
    }
}

/// Text form used in config files: `always_validate`, `always_reject`,
/// `edit_then_validate`, `ignore_all` or `probabilistic(v,e,r)`, optionally
/// followed by `+append:<suffix>`.
impl FromStr for AuthorScript {
    type Err = ScriptParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScriptParseError(s.to_string());
        let (head, transform) = match s.split_once("+append:") {
            Some((h, suffix)) => (h.trim(), EditTransform::AppendToName(suffix.to_string())),
            None => (s.trim(), EditTransform::default()),
        };
        let policy = match head {
            "always_validate" => ScriptPolicy::AlwaysValidate,
            "always_reject" => ScriptPolicy::AlwaysReject,
            "edit_then_validate" => ScriptPolicy::EditThenValidate,
            "ignore_all" => ScriptPolicy::IgnoreAll,
            other => {
                let args = other
                    .strip_prefix("probabilistic(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(err)?;
                let w: Vec<f64> = args
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err())?;
                let [validate, edit, reject] = w[..] else {
                    return Err(err());
                };
                ScriptPolicy::Probabilistic {
                    validate,
                    edit,
                    reject,
                }
            }
        };
        let script = AuthorScript {
            policy,
            edit_transform: transform,
        };
        script.validate().map_err(|_| err())?;
        Ok(script)
    }
}

impl fmt::Display for AuthorScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.policy {
            ScriptPolicy::AlwaysValidate => f.write_str("always_validate")?,
            ScriptPolicy::AlwaysReject => f.write_str("always_reject")?,
            ScriptPolicy::EditThenValidate => f.write_str("edit_then_validate")?,
            ScriptPolicy::IgnoreAll => f.write_str("ignore_all")?,
            ScriptPolicy::Probabilistic {
                validate,
                edit,
                reject,
            } => write!(f, "probabilistic({validate},{edit},{reject})")?,
        }
        match &self.edit_transform {
            t if *t == EditTransform::default() => Ok(()),
            EditTransform::AppendToName(s) => write!(f, "+append:{s}"),
        }
    }
}

/// Scripts keyed by e-mail glob; the first matching pattern wins.
#[derive(Debug, Clone)]
pub struct ScriptBook {
    rules: Vec<(glob::Pattern, AuthorScript)>,
    fallback: AuthorScript,
}

impl Default for ScriptBook {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            fallback: AuthorScript::new(ScriptPolicy::IgnoreAll),
        }
    }
}

impl ScriptBook {
    pub fn uniform(script: AuthorScript) -> Self {
        Self {
            rules: Vec::new(),
            fallback: script,
        }
    }

    pub fn with_rule(
        mut self,
        pattern: &str,
        script: AuthorScript,
    ) -> Result<Self, glob::PatternError> {
        self.rules.push((glob::Pattern::new(pattern)?, script));
        Ok(self)
    }

    pub fn with_fallback(mut self, script: AuthorScript) -> Self {
        self.fallback = script;
        self
    }

    pub fn script_for(&self, email: &str) -> &AuthorScript {
        let opts = glob::MatchOptions {
            case_sensitive: false,
            ..glob::MatchOptions::new()
        };
        self.rules
            .iter()
            .find(|(p, _)| p.matches_with(email, opts))
            .map(|(_, s)| s)
            .unwrap_or(&self.fallback)
    }
}

/// What a round of author activity did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionTally {
    pub taken: BTreeMap<AuthorAction, usize>,
    /// Actions refused because the offer was already closed.
    pub refused: usize,
}

impl ActionTally {
    pub fn total(&self) -> usize {
        self.taken.values().sum()
    }

    pub fn get(&self, action: AuthorAction) -> usize {
        self.taken.get(&action).copied().unwrap_or(0)
    }
}

/// Simulated authors: read their mail and click one link per mention.
pub struct AuthorAgents {
    book: ScriptBook,
    rng: Mutex<ChaCha8Rng>,
    handled: Mutex<HashSet<(NotificationId, NotificationId)>>,
    http: reqwest::Client,
}

impl AuthorAgents {
    pub fn new(book: ScriptBook, seed: u64) -> Self {
        Self {
            book,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            handled: Mutex::new(HashSet::new()),
            http: reqwest::Client::new(),
        }
    }

    /// Answers every mention in unread messages, in delivery order.
    pub async fn run(&self, mail: &MailChannel) -> ActionTally {
        let mut tally = ActionTally::default();
        for message in mail.messages() {
            for mention in &message.mentions {
                if !self
                    .handled
                    .lock()
                    .insert((message.message_id, mention.offer_id))
                {
                    continue;
                }
                let script = self.book.script_for(&message.recipient.email);
                let action = script.decide(&mut *self.rng.lock());
                let edited = (action == AuthorAction::Edit)
                    .then(|| script.edit_transform.apply(&mention.descriptor));
                match self
                    .click(&message, &mention.tokens[&action], action, edited)
                    .await
                {
                    Ok(true) => *tally.taken.entry(action).or_default() += 1,
                    Ok(false) => tally.refused += 1,
                    Err(e) => {
                        tracing::warn!(message = %message.message_id, error = %e, "author action failed");
                        self.handled
                            .lock()
                            .remove(&(message.message_id, mention.offer_id));
                    }
                }
            }
        }
        tally
    }

    async fn click(
        &self,
        message: &AuthorMessage,
        token: &str,
        action: AuthorAction,
        edited: Option<MentionDescriptor>,
    ) -> Result<bool, reqwest::Error> {
        let body = serde_json::json!({ "action": action, "edited": edited });
        let resp = self
            .http
            .post(message.action_url(token))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await?;
        let status = resp.status();
        if status.is_server_error() {
            return resp.error_for_status().map(|_| false);
        }
        Ok(status.is_success())
    }
}

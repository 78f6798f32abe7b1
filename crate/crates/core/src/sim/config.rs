use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::actors::{AuthorScript, ScriptBook, ScriptPolicy};
use crate::ldn::RetryPolicy;
use crate::registry::SendPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Aggregator,
    Repository,
    Archive,
    Dashboard,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Aggregator,
        Role::Repository,
        Role::Archive,
        Role::Dashboard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Aggregator => "aggregator",
            Role::Repository => "repository",
            Role::Archive => "archive",
            Role::Dashboard => "dashboard",
        }
    }
}

/// Everything a simulation run needs. Equal configs and seeds give equal
/// outcomes.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub host: String,
    /// Port per role; 0 picks a free port.
    pub ports: BTreeMap<Role, u16>,
    pub seed: u64,
    pub policy: SendPolicy,
    pub scripts: ScriptBook,
    pub corpus_path: PathBuf,
    pub state_dir: PathBuf,
    pub institution_domain: String,
    pub repository_prefix: String,
    pub expiry: Option<chrono::Duration>,
    pub retry: RetryPolicy,
    /// Simulated time that passes between two sweeps.
    pub sweep_step: chrono::Duration,
    pub max_sweeps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("config key {key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("ports {0} and {1} are the same")]
    PortClash(&'static str, &'static str),
}

impl RunConfig {
    /// Defaults suitable for tests: free ports, all authors validate.
    pub fn new(corpus_path: impl Into<PathBuf>, state_dir: impl Into<PathBuf>) -> Self {
        Self {
            host: "127.0.0.1".into(),
            ports: Role::ALL.iter().map(|r| (*r, 0)).collect(),
            seed: 42,
            policy: SendPolicy::default(),
            scripts: ScriptBook::uniform(AuthorScript::new(ScriptPolicy::AlwaysValidate)),
            corpus_path: corpus_path.into(),
            state_dir: state_dir.into(),
            institution_domain: "open.ac.uk".into(),
            repository_prefix: String::new(),
            expiry: None,
            retry: RetryPolicy {
                max_attempts: 4,
                base_delay: Duration::from_millis(20),
                jitter: false,
            },
            sweep_step: chrono::Duration::seconds(60),
            max_sweeps: 500,
        }
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    /// Parses the flat `key = value` format. Relative paths resolve against
    /// `base_dir`. Overrides are `key=value` strings applied after the file.
    pub fn parse(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            set(&mut entries, k.trim(), v.trim());
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(o.clone()))?;
            set(&mut entries, k.trim(), v.trim());
        }

        let mut cfg = Self::new(PathBuf::new(), base_dir.join("state"));
        let mut corpus = None;
        let mut fallback = None;
        let mut book = ScriptBook::default();
        for (key, value) in &entries {
            let bad = |message: String| ConfigError::Value {
                key: key.clone(),
                message,
            };
            let num = |v: &str| v.parse::<u64>().map_err(|e| bad(e.to_string()));
            let flag = |v: &str| v.parse::<bool>().map_err(|e| bad(e.to_string()));
            match key.as_str() {
                "seed" => cfg.seed = num(value)?,
                "host" => cfg.host = value.clone(),
                "corpus" => corpus = Some(resolve(base_dir, value)),
                "state_dir" => cfg.state_dir = resolve(base_dir, value),
                "institution_domain" => cfg.institution_domain = value.clone(),
                "repository_prefix" => cfg.repository_prefix = value.clone(),
                "policy.auto_send" => cfg.policy.auto_send = flag(value)?,
                "policy.high_confidence_only" => cfg.policy.high_confidence_only = flag(value)?,
                "policy.threshold" => {
                    cfg.policy.threshold = value.parse::<f64>().map_err(|e| bad(e.to_string()))?
                }
                "policy.max_authors_per_institution" => {
                    cfg.policy.max_authors_per_institution = num(value)? as usize
                }
                "expiry_secs" => {
                    cfg.expiry = match value.as_str() {
                        "" | "none" => None,
                        v => Some(chrono::Duration::seconds(num(v)? as i64)),
                    }
                }
                "sweep_step_secs" => cfg.sweep_step = chrono::Duration::seconds(num(value)? as i64),
                "max_sweeps" => cfg.max_sweeps = num(value)? as usize,
                "retry.max_attempts" => cfg.retry.max_attempts = num(value)? as u32,
                "retry.base_delay_ms" => cfg.retry.base_delay = Duration::from_millis(num(value)?),
                "retry.jitter" => cfg.retry.jitter = flag(value)?,
                "script.default" => {
                    fallback = Some(
                        value
                            .parse::<AuthorScript>()
                            .map_err(|e| bad(e.to_string()))?,
                    )
                }
                k if k.starts_with("port.") => {
                    let role = Role::ALL
                        .into_iter()
                        .find(|r| r.as_str() == &k["port.".len()..])
                        .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
                    let port = value.parse::<u16>().map_err(|e| bad(e.to_string()))?;
                    cfg.ports.insert(role, port);
                }
                k if k.starts_with("script.") => {
                    let script = value
                        .parse::<AuthorScript>()
                        .map_err(|e| bad(e.to_string()))?;
                    book = book
                        .with_rule(&k["script.".len()..], script)
                        .map_err(|e| bad(e.to_string()))?;
                }
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        cfg.corpus_path = corpus.ok_or_else(|| ConfigError::Value {
            key: "corpus".into(),
            message: "missing".into(),
        })?;
        cfg.scripts = match fallback {
            Some(f) => book.with_fallback(f),
            None => book,
        };
        cfg.policy.validate().map_err(|e| ConfigError::Value {
            key: "policy".into(),
            message: e.to_string(),
        })?;
        cfg.check_ports()?;
        Ok(cfg)
    }

    pub fn check_ports(&self) -> Result<(), ConfigError> {
        for (i, a) in Role::ALL.iter().enumerate() {
            for b in &Role::ALL[i + 1..] {
                let (pa, pb) = (self.ports[a], self.ports[b]);
                if pa != 0 && pa == pb {
                    return Err(ConfigError::PortClash(a.as_str(), b.as_str()));
                }
            }
        }
        Ok(())
    }
}

/// Later values win; script rules keep their first position.
fn set(entries: &mut Vec<(String, String)>, key: &str, value: &str) {
    match entries.iter_mut().find(|(k, _)| k == key) {
        Some(e) => e.1 = value.to_string(),
        None => entries.push((key.to_string(), value.to_string())),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

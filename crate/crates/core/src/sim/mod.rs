//! Boots the aggregator, repository, archive and dashboard on local ports
//! and drives the simulated authors until nothing more happens.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use tokio::net::TcpListener;
use url::Url;

pub use config::{ConfigError, Role, RunConfig};

use crate::actors::{
    ActionTally, Aggregator, AggregatorConfig, Archive, AuthorAgents, Catalogue, MailChannel,
    Repository, RepositoryConfig, RepositoryRoute, TickReport,
};
use crate::clock::ManualClock;
use crate::dashboard::{self, DashboardState};
use crate::ldn::{serve, Deliverer, Inbox, InboxOpenError, ServerHandle};
use crate::notify::{ActorKind, ActorRef, ServiceEndpoint};
use crate::registry::{
    load_corpus, CorpusError, CorruptLog, MentionDraft, MentionState, Registry, RegistryError,
    ResponseKind, Tally,
};

pub const REGISTRY_LOG: &str = "registry.log";
pub const SETTINGS_FILE: &str = "settings.json";
pub const MAILBOX_DIR: &str = "mailbox";

fn inbox_file(role: Role) -> String {
    format!("{}-inbox.ndjson", role.as_str())
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Inbox(#[from] InboxOpenError),
    #[error("{what} {path}: {source}")]
    Io {
        what: &'static str,
        path: String,
        source: std::io::Error,
    },
    #[error("cannot listen for the {role} on {addr}: {source}")]
    Bind {
        role: &'static str,
        addr: String,
        source: std::io::Error,
    },
}

/// Final figures, computed from the registry alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub states: Tally,
    pub responses: BTreeMap<ResponseKind, usize>,
    pub announced: usize,
    pub pids: usize,
}

impl Stats {
    pub fn from_registry(registry: &Registry) -> Self {
        let records = registry.records();
        let mut responses: BTreeMap<ResponseKind, usize> =
            ResponseKind::ALL.iter().map(|k| (*k, 0)).collect();
        for r in &records {
            if let Some(k) = r.response_kind {
                *responses.entry(k).or_default() += 1;
            }
        }
        Self {
            states: registry.tally_by_state(),
            responses,
            announced: records
                .iter()
                .filter(|r| r.state == MentionState::Announced)
                .count(),
            pids: records.iter().filter(|r| r.pid.is_some()).count(),
        }
    }
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>6}", "state", "count")?;
        for (state, n) in self.states.iter() {
            writeln!(f, "{:<14}{:>6}", state.as_str(), n)?;
        }
        writeln!(f, "{:<14}{:>6}", "total", self.states.total())?;
        writeln!(f)?;
        writeln!(f, "{:<14}{:>6}", "response", "count")?;
        for (kind, n) in &self.responses {
            writeln!(f, "{:<14}{:>6}", kind.as_str(), n)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<14}{:>6}", "announced", self.announced)?;
        writeln!(f, "{:<14}{:>6}", "pids", self.pids)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub offered: usize,
    pub announced: usize,
    pub expired: usize,
    pub repository: TickReport,
    pub actions: ActionTally,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub sweeps: usize,
    pub quiescent: bool,
}

pub struct Simulation {
    cfg: RunConfig,
    clock: Arc<ManualClock>,
    registry: Arc<Registry>,
    aggregator: Arc<Aggregator>,
    repository: Arc<Repository>,
    archive: Arc<Archive>,
    mail: Arc<MailChannel>,
    agents: AuthorAgents,
    urls: BTreeMap<Role, Url>,
    servers: Vec<ServerHandle>,
}

fn io_err(what: &'static str, path: &Path) -> impl FnOnce(std::io::Error) -> SimError {
    let path = path.display().to_string();
    move |source| SimError::Io { what, path, source }
}

/// Removes the files a previous run left in `state_dir`, and nothing else.
pub fn wipe_state(state_dir: &Path) -> Result<(), SimError> {
    let mut files: Vec<PathBuf> = vec![state_dir.join(REGISTRY_LOG), state_dir.join(SETTINGS_FILE)];
    files.extend(Role::ALL.iter().map(|r| state_dir.join(inbox_file(*r))));
    for f in files {
        if f.exists() {
            std::fs::remove_file(&f).map_err(io_err("removing", &f))?;
        }
    }
    let mailbox = state_dir.join(MAILBOX_DIR);
    if mailbox.exists() {
        std::fs::remove_dir_all(&mailbox).map_err(io_err("removing", &mailbox))?;
    }
    Ok(())
}

impl Simulation {
    /// Loads the configured corpus and starts every service.
    pub async fn start(cfg: RunConfig, fresh: bool) -> Result<Self, SimError> {
        let drafts = load_corpus(&cfg.corpus_path)?;
        Self::start_with(cfg, drafts, fresh).await
    }

    pub async fn start_with(
        cfg: RunConfig,
        drafts: Vec<MentionDraft>,
        fresh: bool,
    ) -> Result<Self, SimError> {
        let dir = cfg.state_dir.clone();
        if fresh {
            wipe_state(&dir)?;
        }
        std::fs::create_dir_all(&dir).map_err(io_err("creating", &dir))?;

        let clock = Arc::new(ManualClock::new(
            Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
            chrono::Duration::milliseconds(1),
        ));
        let registry = Arc::new(Registry::open(&dir.join(REGISTRY_LOG), clock.clone())?);
        registry.ingest(&drafts)?;

        let mut listeners = BTreeMap::new();
        let mut urls = BTreeMap::new();
        for role in Role::ALL {
            let addr = format!("{}:{}", cfg.host, cfg.ports[&role]);
            let listener = TcpListener::bind(&addr)
                .await
                .map_err(|source| SimError::Bind {
                    role: role.as_str(),
                    addr: addr.clone(),
                    source,
                })?;
            let local = listener.local_addr().map_err(|source| SimError::Bind {
                role: role.as_str(),
                addr,
                source,
            })?;
            urls.insert(
                role,
                Url::parse(&format!("http://{local}/")).expect("valid url"),
            );
            listeners.insert(role, listener);
        }
        let endpoint = |role: Role| {
            let base = &urls[&role];
            ServiceEndpoint::new(base.as_str(), base.join("inbox/").expect("valid").as_str())
        };
        let open_inbox = |role: Role| -> Result<Arc<Inbox>, SimError> {
            let url = urls[&role].join("inbox/").expect("valid");
            Ok(Arc::new(Inbox::open(
                url,
                &dir.join(inbox_file(role)),
                clock.clone(),
            )?))
        };
        let deliverer = |salt: u64| Deliverer::new(cfg.retry, cfg.seed.wrapping_add(salt));

        let archive = Arc::new(Archive::new(open_inbox(Role::Archive)?, clock.clone()));

        let mail = Arc::new(MailChannel::new(Some(&dir.join(MAILBOX_DIR))));
        let repository = Arc::new(Repository::new(
            RepositoryConfig {
                endpoint: endpoint(Role::Repository),
                actor: ActorRef::new(
                    urls[&Role::Repository].as_str(),
                    "Institutional repository",
                    ActorKind::Service,
                ),
                institution_domain: cfg.institution_domain.clone(),
                max_recipients: cfg.policy.max_authors_per_institution,
                archive_register_url: urls[&Role::Archive].join("register").expect("valid").into(),
                action_base: urls[&Role::Repository]
                    .join("actions/")
                    .expect("valid")
                    .into(),
                seed: cfg.seed,
            },
            Catalogue::from_drafts(&drafts),
            open_inbox(Role::Repository)?,
            mail.clone(),
            deliverer(2),
        ));

        let aggregator = Arc::new(Aggregator::new(
            AggregatorConfig {
                endpoint: endpoint(Role::Aggregator),
                actor: ActorRef::new(
                    urls[&Role::Aggregator].as_str(),
                    "Mention aggregator",
                    ActorKind::Service,
                ),
                repositories: vec![RepositoryRoute {
                    oai_prefix: cfg.repository_prefix.clone(),
                    endpoint: endpoint(Role::Repository),
                }],
                subscribers: vec![endpoint(Role::Archive)],
                seed: cfg.seed,
                expiry: cfg.expiry,
            },
            registry.clone(),
            open_inbox(Role::Aggregator)?,
            deliverer(1),
            clock.clone(),
            cfg.policy.clone(),
        ));

        let dashboard = dashboard::router(DashboardState {
            aggregator: aggregator.clone(),
            institution_domain: cfg.institution_domain.clone(),
            settings_path: Some(dir.join(SETTINGS_FILE)),
        });

        let mut servers = Vec::new();
        for (role, listener) in listeners {
            let router = match role {
                Role::Aggregator => aggregator.router(),
                Role::Repository => repository.router(),
                Role::Archive => archive.router(),
                Role::Dashboard => dashboard.clone(),
            };
            servers.push(serve(listener, router).map_err(|source| SimError::Bind {
                role: role.as_str(),
                addr: urls[&role].to_string(),
                source,
            })?);
        }

        let agents = AuthorAgents::new(cfg.scripts.clone(), cfg.seed);
        Ok(Self {
            cfg,
            clock,
            registry,
            aggregator,
            repository,
            archive,
            mail,
            agents,
            urls,
            servers,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn aggregator(&self) -> &Arc<Aggregator> {
        &self.aggregator
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repository
    }

    pub fn archive(&self) -> &Arc<Archive> {
        &self.archive
    }

    pub fn mail(&self) -> &Arc<MailChannel> {
        &self.mail
    }

    pub fn url(&self, role: Role) -> &Url {
        &self.urls[&role]
    }

    pub fn clock(&self) -> &Arc<ManualClock> {
        &self.clock
    }

    /// One pass over every actor's pending work.
    pub async fn sweep(&self) -> SweepReport {
        let offered = self.aggregator.auto_offer().await.len();
        let announced = self.aggregator.retry_announces().await;
        let expired = self.aggregator.expire().await;
        let repository = self.repository.tick().await;
        let actions = self.agents.run(&self.mail).await;
        self.clock.advance(self.cfg.sweep_step);
        SweepReport {
            offered,
            announced,
            expired,
            repository,
            actions,
        }
    }

    fn signature(&self) -> (usize, usize, usize, usize) {
        (
            self.registry.journal_len(),
            self.mail.len(),
            self.repository.pending_work(),
            self.aggregator.inbox().len()
                + self.repository.inbox().len()
                + self.archive.inbox().len(),
        )
    }

    /// Sweeps until two consecutive sweeps change nothing. Offers that can
    /// still expire keep the run going.
    pub async fn run_to_quiescence(&self) -> RunReport {
        let mut idle = 0;
        let mut sweeps = 0;
        while sweeps < self.cfg.max_sweeps {
            let before = self.signature();
            let report = self.sweep().await;
            sweeps += 1;
            let moved = self.signature() != before || report.actions.total() > 0;
            let expiring = self.cfg.expiry.is_some()
                && self.registry.tally_by_state().get(MentionState::Sent) > 0;
            idle = if moved || expiring { 0 } else { idle + 1 };
            if idle >= 2 {
                return RunReport {
                    sweeps,
                    quiescent: true,
                };
            }
        }
        tracing::warn!(sweeps, "stopped before quiescence");
        RunReport {
            sweeps,
            quiescent: false,
        }
    }

    pub fn stats(&self) -> Stats {
        Stats::from_registry(&self.registry)
    }

    pub async fn shutdown(self) {
        for s in self.servers {
            s.shutdown().await;
        }
    }
}

/// Starts a fresh registry log holding only the corpus.
pub fn seed(cfg: &RunConfig) -> Result<Stats, SimError> {
    let drafts = load_corpus(&cfg.corpus_path)?;
    let dir = &cfg.state_dir;
    std::fs::create_dir_all(dir).map_err(io_err("creating", dir))?;
    wipe_state(dir)?;
    let registry = Registry::open(&dir.join(REGISTRY_LOG), Arc::new(ManualClock::fixed()))?;
    registry.ingest(&drafts)?;
    Ok(Stats::from_registry(&registry))
}

/// Figures from whatever part of the log is readable, with the position of
/// the first unreadable line if any.
pub fn inspect(state_dir: &Path) -> Result<(Stats, Option<CorruptLog>), SimError> {
    let log = existing_log(state_dir)?;
    let (registry, corrupt) = Registry::recover(&log, Arc::new(ManualClock::fixed()))?;
    Ok((Stats::from_registry(&registry), corrupt))
}

fn existing_log(state_dir: &Path) -> Result<PathBuf, SimError> {
    let log = state_dir.join(REGISTRY_LOG);
    if !log.exists() {
        return Err(SimError::Io {
            what: "reading",
            path: log.display().to_string(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        });
    }
    Ok(log)
}

/// Rebuilds the registry from a log and reports its figures.
pub fn replay(state_dir: &Path) -> Result<Stats, SimError> {
    let log = existing_log(state_dir)?;
    let registry = Registry::restore(&log, Arc::new(ManualClock::fixed()))?;
    Ok(Stats::from_registry(&registry))
}

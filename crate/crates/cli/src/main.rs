use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mention_notify::sim::{self, Role, RunConfig, Simulation};

/// Runs the software-mention notification simulation: aggregator, repository,
/// archive and dashboard API on local ports, with scripted authors.
#[derive(Parser)]
#[command(name = "mention-notify", version)]
struct Cli {
    /// Config file in `key = value` form.
    #[arg(long, global = true, env = "MENTION_NOTIFY_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boot every actor, run until nothing moves, print the final figures.
    Run {
        /// Discard earlier state before starting.
        #[arg(long)]
        fresh: bool,
        /// Keep the services up after the run until interrupted.
        #[arg(long)]
        serve: bool,
    },
    /// Reset the state directory to the corpus alone.
    Seed,
    /// Rebuild the registry from its log and print the figures.
    Replay,
    /// Print the figures recorded so far without running anything.
    Stats,
}

fn main() -> ExitCode {
    match try_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn try_main(cli: Cli) -> anyhow::Result<()> {
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let Some(path) = &cli.config else {
        bail!("no config file: pass --config or set MENTION_NOTIFY_CONFIG");
    };
    let cfg = RunConfig::load(path, &cli.overrides)?;

    match cli.command {
        Command::Run { fresh, serve } => {
            require_corpus(&cfg)?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(run(cfg, fresh, serve))
        }
        Command::Seed => {
            require_corpus(&cfg)?;
            let stats = sim::seed(&cfg)?;
            print!("{stats}");
            Ok(())
        }
        Command::Replay => {
            let stats = sim::replay(&cfg.state_dir)
                .with_context(|| format!("replaying {}", cfg.state_dir.display()))?;
            print!("{stats}");
            Ok(())
        }
        Command::Stats => {
            let (stats, corrupt) = sim::inspect(&cfg.state_dir)?;
            if let Some(c) = corrupt {
                eprintln!(
                    "warning: log unreadable from line {} ({})",
                    c.line, c.reason
                );
            }
            print!("{stats}");
            Ok(())
        }
    }
}

fn require_corpus(cfg: &RunConfig) -> anyhow::Result<()> {
    if !cfg.corpus_path.is_file() {
        bail!("corpus not found: {}", cfg.corpus_path.display());
    }
    Ok(())
}

async fn run(cfg: RunConfig, fresh: bool, serve: bool) -> anyhow::Result<()> {
    let sim = Simulation::start(cfg, fresh).await?;
    for role in Role::ALL {
        tracing::info!("{} listening on {}", role.as_str(), sim.url(role));
    }
    let report = sim.run_to_quiescence().await;
    if !report.quiescent {
        eprintln!("warning: still busy after {} sweeps", report.sweeps);
    }
    print!("{}", sim.stats());

    if serve {
        eprintln!(
            "dashboard API at {}api/mentions; Ctrl-C to stop",
            sim.url(Role::Dashboard)
        );
        let mut ticker = tokio::time::interval(Duration::from_secs(1));
        loop {
            tokio::select! {
                _ = ticker.tick() => {
                    sim.sweep().await;
                }
                _ = tokio::signal::ctrl_c() => break,
            }
        }
    }
    sim.shutdown().await;
    Ok(())
}

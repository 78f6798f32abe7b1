use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo.config")
}

fn cli(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mention-notify"))
        .arg("--config")
        .arg(demo_config())
        .arg("--set")
        .arg(format!("state_dir={}", state.display()))
        .args(args)
        .env_remove("MENTION_NOTIFY_CONFIG")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn demo_run_matches_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let golden = include_str!("golden/demo_stats.txt");
    assert_eq!(stdout(&cli(dir.path(), &["run", "--fresh"])), golden);

    let again = tempfile::tempdir().unwrap();
    assert_eq!(stdout(&cli(again.path(), &["run", "--fresh"])), golden);
}

#[test]
fn replay_and_stats_agree_with_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = stdout(&cli(dir.path(), &["run", "--fresh"]));
    assert_eq!(stdout(&cli(dir.path(), &["replay"])), run);
    assert_eq!(stdout(&cli(dir.path(), &["stats"])), run);
}

#[test]
fn seed_resets_to_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&cli(dir.path(), &["run", "--fresh"]));
    let seeded = stdout(&cli(dir.path(), &["seed"]));
    assert!(seeded.contains("ready             20"), "{seeded}");
    assert!(seeded.contains("total             20"));
    assert_eq!(stdout(&cli(dir.path(), &["stats"])), seeded);
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = cli(
        dir.path(),
        &["--set", &format!("corpus={}", missing.display()), "run"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&missing.display().to_string()), "{err}");
}

#[test]
fn config_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mention-notify"))
        .args([
            "--set",
            &format!("state_dir={}", dir.path().display()),
            "seed",
        ])
        .env("MENTION_NOTIFY_CONFIG", demo_config())
        .output()
        .unwrap();
    assert!(stdout(&out).contains("total             20"));

    let none = Command::new(env!("CARGO_BIN_EXE_mention-notify"))
        .arg("stats")
        .env_remove("MENTION_NOTIFY_CONFIG")
        .output()
        .unwrap();
    assert_eq!(none.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&none.stderr).contains("MENTION_NOTIFY_CONFIG"));
}

#[test]
fn bad_configuration_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--set", "policy.threshold=150", "run"],
        vec!["--set", "colour=red", "run"],
        vec!["--set", "seed", "run"],
        vec![
            "--set",
            "port.archive=9000",
            "--set",
            "port.dashboard=9000",
            "run",
        ],
    ] {
        let out = cli(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = cli(dir.path(), &["replay"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("registry.log"));
}

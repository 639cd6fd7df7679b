use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn webalign(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webalign"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn all_then_rerun_skips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let first = webalign(&["--config", cfg, "--workers", "1", "all"], tmp.path());
    assert!(first.status.success(), "{}", text(&first.stderr));
    let stdout = text(&first.stdout);
    for cmd in ["generate", "train-graph", "train-align", "evaluate"] {
        assert!(stdout.contains(&format!("[{cmd}] done")), "{stdout}");
    }
    assert!(tmp.path().join("eval/metrics.tsv").exists());

    let second = webalign(&["--config", cfg, "all"], tmp.path());
    assert!(second.status.success());
    assert_eq!(text(&second.stdout).matches("skipped").count(), 4);
}

#[test]
fn missing_upstream_names_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = webalign(
        &["--config", smoke_config().to_str().unwrap(), "train-align"],
        tmp.path(),
    );
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("run `generate` first"), "{err}");
}

#[test]
fn unknown_config_key_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "[align]\ntemprature = 0.1\n").unwrap();
    let out = webalign(&["--config", path.to_str().unwrap(), "config"], tmp.path());
    assert!(!out.status.success());
    assert!(
        text(&out.stderr).contains("temprature"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn config_prints_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = webalign(&["--seed", "42", "config"], tmp.path());
    assert!(out.status.success());
    let shown = text(&out.stdout);
    assert!(shown.lines().any(|l| l == "seed = 42"), "{shown}");
    assert!(shown.contains("temperature = 0.01"));
}

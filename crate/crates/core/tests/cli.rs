//! Exercises the installed binary end to end: exit codes, store artifacts,
//! and flag overrides.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

use common::{write_corpus_csv, CorpusSpec, SIX_REGIONS};

const BIN: &str = env!("CARGO_BIN_EXE_epicast");

fn write_config(dir: &Path, cases: &Path, store: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{
                "cases_file": {cases:?},
                "output_dir": {store:?},
                "first_origin": "2020-03-15",
                "last_origin": "2020-03-22",
                "draws": 30,
                "seed": 5,
                "chains": {{"chains": 2, "iterations": 150, "warmup": 75}}
            }}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn full_cli_run() {
    let dir = TempDir::new().unwrap();
    let cases = dir.path().join("cases.csv");
    let two: Vec<CorpusSpec> = SIX_REGIONS.into_iter().take(2).collect();
    write_corpus_csv(&cases, &two, "2020-01-19", 120, 3);
    let store = dir.path().join("store");
    let config = write_config(dir.path(), &cases, &store);

    // Backtest with a family filter and draw override.
    let out = Command::new(BIN)
        .args(["backtest", "--config"])
        .arg(&config)
        .args(["--models", "cori,sarima", "--draws", "25", "--jobs", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 2 families x 2 regions x 2 origins.
    assert!(stdout.contains("8 tasks"), "stdout: {stdout}");
    assert!(store.join("manifest.csv").exists());
    assert!(store.join("config.json").exists());
    let fc = fs::read_to_string(
        store.join("forecasts/cori-tau7/aa/2020-03-15.csv"),
    )
    .unwrap();
    assert_eq!(fc.lines().count(), 25, "draw override respected");

    // Score the store.
    let out = Command::new(BIN)
        .args(["score", "--store"])
        .arg(&store)
        .arg("--input")
        .arg(&cases)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(store.join("scores.csv").exists());
    assert!(store.join("hotspots.csv").exists());
    assert!(store.join("summary.csv").exists());
    assert!(store.join("relative_skill.csv").exists());

    // Report.
    let out = Command::new(BIN)
        .args(["report", "--store"])
        .arg(&store)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(store.join("ribbons.csv").exists());
    assert!(store.join("best_choices.csv").exists());
    let best = fs::read_to_string(store.join("best_choices.csv")).unwrap();
    assert!(best.lines().count() == 3, "header + one pick per family: {best}");
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"cases_file": "x.csv"}"#).unwrap();
    let out = Command::new(BIN)
        .args(["backtest", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Scoring an empty directory fails cleanly too.
    let out = Command::new(BIN)
        .args(["score", "--store"])
        .arg(dir.path().join("nothing"))
        .arg("--input")
        .arg(dir.path().join("missing.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn partial_failures_exit_two() {
    let dir = TempDir::new().unwrap();
    let cases = dir.path().join("cases.csv");
    let two: Vec<CorpusSpec> = SIX_REGIONS.into_iter().take(2).collect();
    write_corpus_csv(&cases, &two, "2020-01-19", 120, 3);
    let store = dir.path().join("store");
    let config = write_config(dir.path(), &cases, &store);
    // Occupy one region's forecast directory so its writes fail.
    fs::create_dir_all(store.join("forecasts/cori-tau7")).unwrap();
    fs::write(store.join("forecasts/cori-tau7/aa"), "roadblock").unwrap();

    let out = Command::new(BIN)
        .args(["backtest", "--config"])
        .arg(&config)
        .args(["--models", "cori"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "partial failure is reported");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2 failed"), "stdout: {stdout}");
}

#[test]
fn seed_changes_forecasts_and_reruns_do_not() {
    let dir = TempDir::new().unwrap();
    let cases = dir.path().join("cases.csv");
    let one: Vec<CorpusSpec> = SIX_REGIONS.into_iter().take(1).collect();
    write_corpus_csv(&cases, &one, "2020-01-19", 120, 3);

    let run = |store: &Path, seed: &str| {
        let config = write_config(dir.path(), &cases, store);
        let out = Command::new(BIN)
            .args(["backtest", "--config"])
            .arg(&config)
            .args(["--models", "cori", "--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success());
        fs::read(store.join("forecasts/cori-tau7/aa/2020-03-15.csv")).unwrap()
    };
    let a = run(&dir.path().join("s1"), "7");
    let b = run(&dir.path().join("s2"), "7");
    let c = run(&dir.path().join("s3"), "8");
    assert_eq!(a, b, "same seed, same bytes");
    assert_ne!(a, c, "different seed, different draws");
}

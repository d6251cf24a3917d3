use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flexural_revival::config::{preset, RunConfig, PRESETS};

fn revival(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revival")).args(args).output().unwrap()
}

fn small_modal_run(dir: &Path) -> Output {
    revival(&[
        "simulate",
        "--engine",
        "modal",
        "--spectrum",
        "--set",
        "medium.boundary=simply-supported",
        "--map-points",
        "40",
        "--t-end-s",
        "200e-6",
        "--output-dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn printed_presets_parse_back() {
    for name in PRESETS {
        let out = revival(&["preset", name, "--print-config"]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(cfg, preset(name).unwrap());
    }
}

#[test]
fn config_errors_exit_with_two() {
    for args in [
        vec!["preset", "nowhere"],
        vec!["preset", "center", "--print-config", "--set", "grid.safety=1.5"],
        vec!["preset", "center", "--print-config", "--set", "grid.bogus=1"],
        vec!["simulate", "--engine", "modal", "--t-end-s", "1e-5"],
        vec!["compare", "--t-end-s", "1e-5"],
    ] {
        let out = revival(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn zero_window_compare_succeeds_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = revival(&[
        "compare",
        "--set",
        "medium.boundary=simply-supported",
        "--t-end-s",
        "0",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("frames compared: 0"));
}

#[test]
fn runs_are_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let out = small_modal_run(d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["confinement.csv", "events.csv", "spacing.csv", "summary.txt", "movie.f32", "envelope.f32"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty(), "{file}");
        assert_eq!(x, y, "{file} differs between runs");
    }
    let csv = fs::read_to_string(a.path().join("confinement.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("time_s,C"));
    let spacing = fs::read_to_string(a.path().join("spacing.csv")).unwrap();
    assert_eq!(spacing.lines().next(), Some("index,f_Hz,spacing_Hz,multiple,deviation"));
    let summary = fs::read_to_string(a.path().join("summary.txt")).unwrap();
    assert!(summary.contains("predicted T_rev") && summary.contains("detected T_rev"), "{summary}");
    let pgm = fs::read(a.path().join("snapshots/initial.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n40 40\n255\n"));
    assert_eq!(pgm.len(), b"P5\n40 40\n255\n".len() + 1600);
    assert!(a.path().join("snapshots/initial.scale").exists());
    let saved = RunConfig::from_toml(&fs::read_to_string(a.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(saved.grid.map_points, 40);
}

#[test]
fn analyze_reads_a_dump() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    assert!(small_modal_run(src.path()).status.success());
    let cfg = src.path().join("config.toml");
    let out = revival(&[
        "analyze",
        "--input",
        src.path().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        dst.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let events = fs::read_to_string(dst.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().next(), Some("time_s,C,prominence,kind,score"));
    assert!(events.lines().count() > 1, "{events}");
}

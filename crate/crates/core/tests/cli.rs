use std::path::Path;
use std::process::{Command, Output};

use wla_core::config::load_config;
use wla_core::export::read_manifest;
use wla_core::Error;

fn wla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wla"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_and_shows_presets() {
    let o = wla(&["preset", "--list"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert!(names.contains(&"fig2-pfn".to_string()));
    assert_eq!(names.len(), 9);

    let o = wla(&["preset", "clock-fig7-wla", "--show"]);
    assert!(stdout(&o).contains("kind = \"clock\""));
}

#[test]
fn preset_run_and_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = wla(&["preset", "fig2-pfn", "--out", a.to_str().unwrap(), "--jobs", "2", "--snapshot-steps", "10,1000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = read_manifest(&a).unwrap();
    assert_eq!(first.preset.as_deref(), Some("fig2-pfn"));
    assert!(a.join("weights_k10.csv").exists() && a.join("weights_k1000.csv").exists());

    let b = dir.path().join("b");
    let o = wla(&["run", a.join("config.toml").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(read_manifest(&b).unwrap().outputs_digest, first.outputs_digest);
}

#[test]
fn sweep_subcommand_checks_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, wla_core::harness::preset_text("clock-fig7-wla").unwrap()).unwrap();
    let o = wla(&["sweep", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind = \"sweep\""));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let o = wla(&["run", "/nonexistent/x.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: io error"));
    assert!(matches!(load_config(Path::new("/nonexistent/x.toml")), Err(Error::Io { .. })));

    let o = wla(&["preset", "nope"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"clock\"\n[topology]\ntype = \"stochastic\"\nn = 4\nedge_prob = 0.5\n").unwrap();
    let o = wla(&["run", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("topology.type"));
}

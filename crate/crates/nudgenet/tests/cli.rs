use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 7

[ensemble]
n_refs = 12
horizon = 1.0

[dataset]
windows = 5

[arch]
hidden_layers = 2
width = 8

[training]
max_iters = 20
patience = 10

[evaluation]
n_refs = 3
horizon = 2.0
k0_time = 1.0
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nudgenet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn nudgenet")
}

fn run_ok(args: &[&str]) -> PathBuf {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_config_exits_2_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let missing = tmp.path().join("nope.toml");
    for cmd in ["generate", "build-dataset", "nudge"] {
        let r = run(&[cmd, "--config", missing.to_str().unwrap(), "--out", o]);
        assert_eq!(r.status.code(), Some(2), "{cmd}");
    }
    let r = run(&["build-dataset", "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "[nudging]\nmu = 30.0\nstrength = 2.0\n");
    let r = run(&["generate", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "[nudging]\nmu = -1.0\n");
    let r = run(&["generate", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!o.exists());
}

#[test]
fn verify_theory_continuous_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&[
        "verify-theory",
        "--case",
        "continuous-x",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).contains("PASS"));
}

#[test]
fn verify_theory_inadmissible_fails_with_4() {
    // Far below the theoretical minimum the hypotheses do not hold.
    let r = run(&[
        "verify-theory",
        "--case",
        "continuous-x",
        "--mu",
        "1.0",
        "--refs",
        "1",
    ]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL"));
}

#[test]
fn staged_pipeline_and_hash_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let g = run_ok(&["generate", "--config", &cfg, "--out", o]);
    let test_ens = g.join("test_ensemble.nne");
    let d = run_ok(&[
        "build-dataset",
        "--config",
        &cfg,
        "--out",
        o,
        "--ensemble",
        g.join("ensemble.nne").to_str().unwrap(),
    ]);
    assert!(d.join("config.toml").is_file());
    let t = run_ok(&[
        "train",
        "--config",
        &cfg,
        "--out",
        o,
        "--dataset",
        d.join("dataset.bin").to_str().unwrap(),
    ]);
    assert!(t.join("model.nnm").is_file());
    let n = run_ok(&[
        "nudge",
        "--config",
        &cfg,
        "--out",
        o,
        "--ensemble",
        test_ens.to_str().unwrap(),
    ]);
    let a = run_ok(&[
        "assimilate",
        "--config",
        &cfg,
        "--out",
        o,
        "--models",
        t.to_str().unwrap(),
        "--ensemble",
        test_ens.to_str().unwrap(),
    ]);
    let r = run(&[
        "evaluate",
        "--config",
        &cfg,
        "--out",
        o,
        "--runs",
        n.to_str().unwrap(),
        a.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = String::from_utf8(r.stdout).unwrap();
    assert!(
        table.contains("nudging") && table.contains("dnn_full"),
        "{table}"
    );

    // Tampering with an observation file must be refused.
    let obs = n.join("observations/obs_0001.csv");
    let mut text = std::fs::read_to_string(&obs).unwrap();
    text.push_str("99,0\n");
    std::fs::write(&obs, text).unwrap();
    let r = run(&[
        "evaluate",
        "--config",
        &cfg,
        "--out",
        o,
        "--runs",
        n.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("hash mismatch"));
}

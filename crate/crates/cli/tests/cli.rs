use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[experiment]
seeds = 1, 2
strategies = adaptive, edge-only

[task]
length = 20
frequencies = 0.4, 0.3, 0.2, 0.1

[task]
length = 20
frequencies = 0.1, 0.2, 0.3, 0.4
illumination = -20, -20, -10

[edge]
kind = oracle
correctness = 0.8

[gate]
calibration_samples = 20
pretrain_epochs = 50

[orchestrator]
maxsize = 4
";

fn coinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coinfer"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn fuse_prints_relabelled_mask() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write(
        dir.path(),
        "pred.txt",
        "PM 2 2 2\n0.9 0.2\n0.4 0.1\n0.1 0.8\n0.6 0.9\n",
    );
    let masks = write(dir.path(), "masks.txt", "RM 1 2 2\n1 1\n0 0\n");
    let out = coinfer(&["fuse", &pred, &masks]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "SM 2 2 2\n0 0\n1 1\n"
    );
}

#[test]
fn validate_echo_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL);
    let first = coinfer(&["validate", &cfg]);
    assert!(first.status.success());
    let echo = write(
        dir.path(),
        "echo.cfg",
        std::str::from_utf8(&first.stdout).unwrap(),
    );
    let second = coinfer(&["validate", &echo]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn bad_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "[gate]\ndelta = 1.5\n");
    let out = coinfer(&["validate", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg"));

    let missing = dir.path().join("missing.cfg");
    let out = coinfer(&["run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_every_cell_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL);
    let out_dir = dir.path().join("out");
    let out = coinfer(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());

    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 * 2 + 1);
    for stem in ["adaptive_1", "adaptive_2", "edge-only_1", "edge-only_2"] {
        assert!(out_dir.join(format!("{stem}.csv")).is_file());
        assert!(out_dir.join(format!("{stem}.trace.csv")).is_file());
    }

    // rerunning from the echo reproduces the outputs
    let echo = out_dir.join("config.echo.txt");
    let again = dir.path().join("again");
    let out = coinfer(&[
        "run",
        echo.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success());
    for name in ["summary.csv", "adaptive_2.trace.csv"] {
        assert_eq!(
            fs::read(out_dir.join(name)).unwrap(),
            fs::read(again.join(name)).unwrap()
        );
    }

    let single = dir.path().join("single");
    let out = coinfer(&[
        "run",
        &cfg,
        "--seed",
        "9",
        "--out",
        single.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let summary = fs::read_to_string(single.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("9")));
}

#[test]
fn sweep_writes_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.cfg",
        &SMALL.replace("seeds = 1, 2", "seeds = 1\nsweep_deltas = 0, 0.5, 1"),
    );
    let out_dir = dir.path().join("out");
    let out = coinfer(&["sweep", &cfg, "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("seed,scorer,delta,cur,miou"));
    assert_eq!(csv.lines().count(), 4 * 3 + 1);
}

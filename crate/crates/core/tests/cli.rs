use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bpnc::channel::{Scenario, PARAMS};

fn bpnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpnc")).args(args).env_remove("BPNC_OUT").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn help_lists_every_flag_and_param() {
    let run = String::from_utf8(bpnc(&["run", "--help"]).stdout).unwrap();
    for flag in ["--scenario", "--builtin", "--seed", "--duration", "--block-size", "--decoder", "--field-bits", "--out", "BPNC_OUT"] {
        assert!(run.contains(flag), "run --help lacks {flag}");
    }
    let sweep = String::from_utf8(bpnc(&["sweep", "--help"]).stdout).unwrap();
    for flag in ["--param", "--seeds", "--serial"] {
        assert!(sweep.contains(flag), "sweep --help lacks {flag}");
    }
    for key in PARAMS {
        assert!(sweep.contains(key), "sweep --help lacks param {key}");
    }
    let top = String::from_utf8(bpnc(&["--help"]).stdout).unwrap();
    for cmd in ["run", "sweep", "paper-suite"] {
        assert!(top.contains(cmd));
    }
}

#[test]
fn run_line_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("line");
    let o = bpnc(&["run", "--builtin", "line7", "--seed", "1", "--duration", "600", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = read(&out, "metrics.csv");
    assert!(metrics.starts_with("# bpnc-metrics v1\n"));
    assert!(metrics.lines().count() > 10);
    assert!(!read(&out, "packets.log").is_empty());
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["seed"], 1);
}

#[test]
fn butterfly_summary_has_per_destination_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpnc(&["run", "--builtin", "butterfly7", "--block-size", "6", "--duration", "900", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    let per_dest = &summary["flows"][0]["decoded_by_destination"];
    assert!(per_dest.get("6").is_some() && per_dest.get("7").is_some(), "{per_dest}");
}

#[test]
fn out_dir_defaults_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bpnc"))
        .args(["run", "--builtin", "grid6", "--duration", "60"])
        .env("BPNC_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn scenario_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = Scenario::builtin("ring7").unwrap();
    sc.name = "my-ring".into();
    let path = dir.path().join("ring.toml");
    fs::write(&path, sc.to_toml()).unwrap();
    let out = dir.path().join("o");
    let o = bpnc(&[
        "run", "--scenario", path.to_str().unwrap(), "--duration", "120", "--seed", "4", "--block-size", "4",
        "--decoder", "rankdef", "--field-bits", "8", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["seed"], 4);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = bpnc(&["run", "--builtin", "line7", "--field-bits", "9", "--out", d]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("field_bits"), "{}", stderr(&o));
    assert_eq!(bpnc(&["run", "--out", d]).status.code(), Some(2));
    assert_eq!(bpnc(&["run", "--builtin", "mesh9", "--out", d]).status.code(), Some(2));
    assert_eq!(bpnc(&["sweep", "--builtin", "line7", "--param", "block_size=", "--out", d]).status.code(), Some(2));
    assert_eq!(bpnc(&["sweep", "--builtin", "line7", "--param", "colour=red", "--out", d]).status.code(), Some(2));
    assert_eq!(bpnc(&["sweep", "--builtin", "line7", "--param", "block_size=2,x", "--out", d]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "nodes = 0\n").unwrap();
    assert_eq!(bpnc(&["run", "--scenario", bad.to_str().unwrap(), "--out", d]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = bpnc(&["run", "--builtin", "line7", "--duration", "10", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let missing = dir.path().join("nope.toml");
    assert_eq!(bpnc(&["run", "--scenario", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn block_size_sweep_has_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpnc(&[
        "sweep", "--builtin", "butterfly7", "--duration", "300", "--param", "block_size=2,4,6,8", "--seeds", "5", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(dir.path(), "sweep.csv");
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("block_size,")).collect();
    assert_eq!(rows.len(), 4, "{csv}");
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("5")));
    // one line per (value, seed, node)
    assert_eq!(read(dir.path(), "runs.csv").lines().filter(|l| l.starts_with("block_size,")).count(), 4 * 5 * 7);
}

#[test]
fn serial_and_parallel_sweeps_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, extra) in [(&a, Some("--serial")), (&b, None)] {
        let mut args = vec!["sweep", "--builtin", "line7", "--duration", "200", "--param", "arrival_rate=0.5,1", "--seeds", "3"];
        args.extend(extra);
        args.extend(["--out", dir.path().to_str().unwrap()]);
        assert!(bpnc(&args).status.success());
    }
    assert_eq!(read(a.path(), "sweep.csv"), read(b.path(), "sweep.csv"));
    assert_eq!(read(a.path(), "runs.csv"), read(b.path(), "runs.csv"));
}

#[test]
fn decoder_sweep_writes_accuracy_curves() {
    let dir = tempfile::tempdir().unwrap();
    let o = bpnc(&[
        "sweep", "--builtin", "butterfly7", "--duration", "600", "--param", "decoder=full,rankdef", "--seeds", "2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc = read(dir.path(), "accuracy.csv");
    assert!(acc.starts_with("# bpnc-metrics v1\n"));
    assert!(acc.lines().any(|l| l.starts_with("rankdef,")), "{acc}");
}

#[test]
fn paper_suite_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = bpnc(&["paper-suite", "--seeds", "1", "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let table = read(a.path(), "preconditioning/table.csv");
    assert!(table.starts_with("# bpnc-metrics v1\n"));
    for sub in ["line7", "ring7", "grid6", "block_size", "decoder_accuracy", "field_size"] {
        assert!(a.path().join(sub).is_dir(), "missing {sub}");
    }
    for file in [
        "preconditioning/table.csv",
        "line7/metrics.csv",
        "line7/nodes.csv",
        "ring7/runs.csv",
        "block_size/sweep.csv",
        "decoder_accuracy/accuracy.csv",
        "field_size/cost.csv",
    ] {
        assert_eq!(read(a.path(), file), read(b.path(), file), "{file} differs");
    }
}

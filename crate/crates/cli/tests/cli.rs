use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chiplet-lab"))
}

fn workloads_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workloads")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("CHIPLET_LAB_OUT").output().unwrap()
}

#[test]
fn missing_workload_fails_but_others_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let good = workloads_dir().join("tf_cell.json");
    let o = run(&[
        "run",
        "--workloads",
        good.to_str().unwrap(),
        "--workloads",
        dir.path().join("nope.json").to_str().unwrap(),
        "--arch",
        "1x2",
        "--arch",
        "3x3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    for a in ["1x2", "3x3"] {
        assert!(out.join("tf_cell").join(a).join("trace.csv").is_file());
    }
    let csv = std::fs::read_to_string(out.join("breakdown.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn glob_and_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = workloads_dir().join("tf*.json");
    let o = bin()
        .args(["run", "--workloads", pattern.to_str().unwrap(), "--arch", "3x3", "--format", "json"])
        .env("CHIPLET_LAB_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("tf/3x3/trace.csv").is_file());
    assert!(dir.path().join("tf_cell/3x3/summary.json").is_file());
    assert!(dir.path().join("summary.json").is_file());
    assert!(!dir.path().join("breakdown.csv").exists());
}

#[test]
fn arch_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wide.cfg");
    std::fs::write(&cfg, "grid=3x6\nnop_bw_gbps=2\ndram_count=4\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--builtin",
        "lstm",
        "--arch",
        cfg.to_str().unwrap(),
        "--arch",
        "6x3",
        "--normalize",
        "--store-and-forward",
        "--serial-multicast",
        "--policy",
        "pipeline:10",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("lstm/wide/trace.csv").is_file());
    assert!(out.join("lstm/3x6/trace.csv").is_file());
    let hops = std::fs::read_to_string(out.join("hop_hist.csv")).unwrap();
    assert!(!hops.contains("multicast"));
}

#[test]
fn analyze_reproduces_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run(&["run", "--builtin", "tf_cell", "--arch", "3x3", "--out", out.to_str().unwrap()]).status.success());
    let again = dir.path().join("again");
    let o = run(&[
        "analyze",
        out.join("tf_cell/3x3/trace.csv").to_str().unwrap(),
        "--arch",
        "3x3",
        "--workload",
        "tf_cell",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["breakdown.csv", "mcast_hist.csv", "hop_hist.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(out.join("tf_cell/3x3").join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(run(&["run", "--builtin", "lstm", "--arch", "3x3", "--policy", "bogus"]).status.code(), Some(2));
    assert_eq!(run(&["run", "--arch", "3x3"]).status.code(), Some(2));
    let o = run(&["list"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 12);
}

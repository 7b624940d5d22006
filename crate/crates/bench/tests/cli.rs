use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aioarch_bench::ExperimentConfig;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aio-bench")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = "runs = 2\n[workload]\nop_count = 3000\n[sweep]\nqd_list = [1, 8, 64]\n";

#[test]
fn dump_defaults_parses_back() {
    let out = bench(&["--dump-defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn sweep_writes_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = bench(&["--config", &cfg, "sweep-qd"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("qd,run,predicted_iops,run_id,"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = bench(&["--config", &cfg, "--seed", "5", "--out", out_dir.to_str().unwrap(), "sweep-qd"]);
        assert_eq!(out.status.code(), Some(0));
        texts.push(fs::read(out_dir.join("sweep_qd.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn plot_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("o");
    let out = bench(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "--plot", "--trace", "sweep-qd"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = fs::read_to_string(out_dir.join("sweep_qd.svg")).unwrap();
    assert!(svg.contains("<svg"));
    assert!(out_dir.join("trace.csv").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.toml", "[workload]\nqdepth = 4\n");
    assert_eq!(bench(&["--config", &unknown, "sweep-qd"]).status.code(), Some(2));
    let bad = write(dir.path(), "b.toml", "[workload]\nblock_size = 1000\n");
    let out = bench(&["--config", &bad, "sweep-qd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("workload.block_size"));
    assert_eq!(bench(&["--config", "/nonexistent/x.toml", "verify"]).status.code(), Some(2));
    // scaling-trace needs a dynamic pool.
    assert_eq!(bench(&["scaling-trace"]).status.code(), Some(2));
}

#[test]
fn verify_exit_code_follows_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", "[verify]\nops = 500\ncorpus_tasks = 10\nseeds = 1\nspsc_items = 1000\n");
    let out = bench(&["--config", &ok, "verify"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("overall,pass"));

    let broken = write(dir.path(), "bad.toml", "[architecture.ring]\nsq_entries = 300\n");
    let out = bench(&["--config", &broken, "verify"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("ring_invariants,fail"));
}

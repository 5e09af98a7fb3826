use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MODEL: &str = r#"{
  "r": 0.75, "b0": 20, "head_mass": 0.983,
  "segments": [
    { "lo": 20, "hi": 3000, "shape": 0.52 },
    { "lo": 3000, "hi": null, "shape": 1.81 }
  ]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowinvert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn model_file(dir: &TempDir) -> String {
    let p = path(dir.path(), "model.json");
    fs::write(&p, MODEL).unwrap();
    p
}

fn generate(dir: &TempDir, prefix: &str, flows: &str, seed: &str) -> PathBuf {
    let model = model_file(dir);
    let p = path(dir.path(), prefix);
    ok(&[
        "generate",
        "--model",
        &model,
        "--flows",
        flows,
        "--seed",
        seed,
        "--out-prefix",
        &p,
    ]);
    PathBuf::from(p)
}

#[test]
fn sampling_with_k_one_copies_the_trace() {
    let dir = TempDir::new().unwrap();
    let p = generate(&dir, "a", "300", "4");
    let prefix = p.to_str().unwrap();
    let packets = format!("{prefix}.packets.csv");
    ok(&[
        "sample",
        "--in",
        &packets,
        "--k",
        "1",
        "--out-prefix",
        prefix,
    ]);
    let a = fs::read(&packets).unwrap();
    let b = fs::read(format!("{prefix}.sampled.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ten_packets_at_k_five_keep_two() {
    let dir = TempDir::new().unwrap();
    let input = path(dir.path(), "in.csv");
    let mut text = String::from("flow_id\n");
    for i in 0..10 {
        text.push_str(&format!("f{}\n", i % 3));
    }
    fs::write(&input, text).unwrap();
    let prefix = path(dir.path(), "s");
    ok(&[
        "sample",
        "--in",
        &input,
        "--k",
        "5",
        "--out-prefix",
        &prefix,
    ]);
    let out = fs::read_to_string(format!("{prefix}.sampled.csv")).unwrap();
    assert_eq!(out, "flow_id\nf0\nf2\n");
}

#[test]
fn five_tuple_rows_are_directional() {
    let dir = TempDir::new().unwrap();
    let input = path(dir.path(), "in.csv");
    fs::write(
        &input,
        "10.0.0.1,10.0.0.2,1234,80,6\nbad line\n10.0.0.2,10.0.0.1,80,1234,6\n",
    )
    .unwrap();
    let prefix = path(dir.path(), "s");
    ok(&[
        "sample",
        "--in",
        &input,
        "--k",
        "2",
        "--out-prefix",
        &prefix,
    ]);
    let out = fs::read_to_string(format!("{prefix}.sampled.csv")).unwrap();
    assert_eq!(out, "10.0.0.1,10.0.0.2,1234,80,6\n");

    ok(&["aggregate", "--in", &input, "--out-prefix", &prefix]);
    let hist = fs::read_to_string(format!("{prefix}.hist.tsv")).unwrap();
    assert_eq!(hist.trim(), "1\t2");
}

#[test]
fn generation_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = generate(&dir, "a", "2000", "11");
    let b = generate(&dir, "b", "2000", "11");
    let c = generate(&dir, "c", "2000", "12");
    for suffix in [".packets.csv", ".truth.hist.tsv"] {
        let read = |p: &PathBuf| fs::read(format!("{}{suffix}", p.display())).unwrap();
        assert_eq!(read(&a), read(&b), "{suffix}");
        assert_ne!(read(&a), read(&c), "{suffix}");
    }
}

#[test]
fn a_single_flow_is_generated() {
    let dir = TempDir::new().unwrap();
    let p = generate(&dir, "one", "1", "3");
    let hist = fs::read_to_string(format!("{}.truth.hist.tsv", p.display())).unwrap();
    assert_eq!(hist.lines().count(), 1);
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(format!("{}.truth.json", p.display())).unwrap())
            .unwrap();
    assert_eq!(truth["K"], 1);
}

#[test]
fn unit_flows_only_fail_the_inversion() {
    let dir = TempDir::new().unwrap();
    let hist = path(dir.path(), "h.tsv");
    fs::write(&hist, "1\t5000\n").unwrap();
    let prefix = path(dir.path(), "inv");
    let out = run(&[
        "invert",
        "--in",
        &hist,
        "--k",
        "100",
        "--out-prefix",
        &prefix,
    ]);
    assert!(!out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(format!("{prefix}.report.json")).unwrap())
            .unwrap();
    assert_ne!(report["status"], "ok");
    assert!(report["error"].as_str().is_some());
}

#[test]
fn missing_inputs_are_errors() {
    let dir = TempDir::new().unwrap();
    let prefix = path(dir.path(), "x");
    let missing = path(dir.path(), "nope.json");
    let out = run(&["score", "--truth", &missing, "--report", &missing]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let out = run(&["aggregate", "--in", &missing, "--out-prefix", &prefix]);
    assert!(!out.status.success());

    let model = model_file(&dir);
    let bad_prefix = path(dir.path(), "no/such/dir/x");
    let out = run(&[
        "generate",
        "--model",
        &model,
        "--flows",
        "5",
        "--seed",
        "1",
        "--out-prefix",
        &bad_prefix,
    ]);
    assert!(!out.status.success());
}

#[test]
fn stages_compose() {
    let dir = TempDir::new().unwrap();
    let p = generate(&dir, "run", "100000", "2");
    let prefix = p.to_str().unwrap();
    ok(&[
        "sample",
        "--in",
        &format!("{prefix}.packets.csv"),
        "--k",
        "10",
        "--out-prefix",
        prefix,
    ]);
    ok(&[
        "aggregate",
        "--in",
        &format!("{prefix}.sampled.csv"),
        "--out-prefix",
        prefix,
    ]);
    ok(&[
        "invert",
        "--in",
        &format!("{prefix}.hist.tsv"),
        "--k",
        "10",
        "--m",
        "2",
        "--out-prefix",
        prefix,
    ]);
    let out = ok(&[
        "score",
        "--truth",
        &format!("{prefix}.truth.json"),
        "--report",
        &format!("{prefix}.report.json"),
    ]);
    let score: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let k = score["relative_errors"]["K_hat"].as_f64().unwrap();
    assert!(k.is_finite() && k.abs() < 1.0, "K_hat error {k}");
    for suffix in [".ccdf.tsv", ".overlay.tsv"] {
        let text = fs::read_to_string(format!("{prefix}{suffix}")).unwrap();
        assert!(text.lines().count() > 5, "{suffix}");
    }
}

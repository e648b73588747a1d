use std::path::Path;
use std::process::{Command, Output};

use agentic_relu::gadgets::{max_gadget, mult_eps};
use agentic_relu::transformer::TransformerNetwork;
use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agentic-relu"));
    for (key, _) in std::env::vars() {
        if key.starts_with("AGENTIC_RELU_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join("reports").join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn path_example_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["path-exp", "--d", "1", "--L", "3", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().count() >= 4);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
    let r = report(dir.path(), "path-exp");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["parameters"]["seed"], 7);
    assert_eq!(r["parameters"]["L"], 3);
    assert!(r["worst_error"].as_f64().unwrap() <= 1e-9);
    assert_eq!(r["tasks"].as_array().unwrap().len(), 100);
    assert!(r.get("wall_time_ms").is_none());
    let csv = std::fs::read_to_string(dir.path().join("reports/path-exp.csv")).unwrap();
    assert!(csv.starts_with("experiment,d,L,N,m,delta,eta,eps,seed"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn path_witness_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["witness", "--family", "path", "--d", "1", "--L", "4", "--N", "7"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("reports/witness-pair.json")).unwrap();
    let pair: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(pair["separation"], 1.0);
    assert_eq!(pair["shared_queries"].as_array().unwrap().len(), 7);
}

#[test]
fn value_example_meets_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["value-exp", "--N", "5", "--eps", "0.01"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(dir.path(), "value-exp");
    assert!(r["worst_error"].as_f64().unwrap() <= 0.05);
    assert_eq!(r["tasks"].as_array().unwrap().len(), 200);
}

#[test]
fn address_and_gadget_runs_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["addr-exp", "--N", "3", "--tasks", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let out = run_in(dir.path(), &["gadget-test"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let csv = std::fs::read_to_string(dir.path().join("reports/gadget-test.csv")).unwrap();
    assert!(csv.starts_with("name,parameter,sup_error,weights"));
    for name in ["abs", "max", "hat", "bump", "selector", "mult"] {
        assert!(
            csv.lines().any(|l| l.starts_with(&format!("{name},"))),
            "{name} missing"
        );
    }
}

#[test]
fn invalid_configs_exit_2_and_name_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 6] = [
        (&["value-exp", "--N", "5", "--delta", "0.05"], "delta < 1/(6N)"),
        (&["value-exp", "--N", "2"], "N >= 3"),
        (&["addr-exp", "--eps", "1.5"], "eps in (0, 1)"),
        (&["path-exp", "--eta", "0.5"], "eta in (0, 1/2)"),
        (&["witness", "--d", "1", "--L", "3", "--N", "4"], "N < 2^(d (L - 1))"),
        (&["convert-transformer"], "input is required"),
    ];
    for (args, needle) in cases {
        let out = run_in(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).contains(needle), "{args:?}: {}", stderr(&out));
    }
    // No report is written for a rejected config.
    assert!(!dir.path().join("reports").exists());
    let out = run_in(dir.path(), &["no-such-experiment"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = run_in(
        dir.path(),
        &["witness", "--out-dir", blocker.join("sub").to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let out = run_in(dir.path(), &["convert-transformer", "--input", "missing.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("missing.json"));
}

#[test]
fn failed_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["path-exp", "--m", "10", "--tasks", "3", "--grid", "100"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL path weight budget"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["value-exp", "--N", "4", "--seed", "11", "--tasks", "30"];
    assert_eq!(run_in(a.path(), &args).status.code(), Some(0));
    assert_eq!(run_in(b.path(), &args).status.code(), Some(0));
    for file in ["value-exp.json", "value-exp.csv"] {
        let x = std::fs::read(a.path().join("reports").join(file)).unwrap();
        let y = std::fs::read(b.path().join("reports").join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
}

#[test]
fn environment_overrides_and_explicit_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("AGENTIC_RELU_SEED", "13")
        .env("AGENTIC_RELU_TASKS", "5")
        .args(["path-exp", "--json", "r.json", "--csv", "r.csv", "--timing"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["parameters"]["seed"], 13);
    assert_eq!(r["tasks"].as_array().unwrap().len(), 5);
    assert!(r["wall_time_ms"].is_u64());
    assert!(dir.path().join("r.csv").exists());
    // The flag beats the environment.
    let out = bin()
        .current_dir(dir.path())
        .env("AGENTIC_RELU_SEED", "13")
        .args(["path-exp", "--seed", "2", "--tasks", "2", "--json", "s.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(r["parameters"]["seed"], 2);
}

#[test]
fn convert_transformer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (name, net) in [("max3", max_gadget(3).unwrap()), ("mult", mult_eps(0.01).unwrap())] {
        let input = dir.path().join(format!("{name}.json"));
        std::fs::write(&input, net.to_json()).unwrap();
        let out = run_in(
            dir.path(),
            &[
                "convert-transformer",
                "--input",
                input.to_str().unwrap(),
                "--lambda",
                "10",
                "--samples",
                "200",
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
        assert!(stdout(&out).contains("PASS conversion defect"));
        let text = std::fs::read_to_string(dir.path().join(format!("reports/{name}.transformer.json"))).unwrap();
        let t = TransformerNetwork::from_json(&text).unwrap();
        assert_eq!(t.depth(), net.depth());
        let x = vec![0.2; net.input_dim()];
        assert!((t.evaluate_vector(&x).unwrap()[0] - net.evaluate_scalar(&x).unwrap()).abs() <= 1e-12);
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"layers\": 3}").unwrap();
    let out = run_in(dir.path(), &["convert-transformer", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not a valid MLP JSON"));
}

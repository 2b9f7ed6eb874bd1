use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn ratelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratelab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ratelab(args);
    assert!(
        out.status.success(),
        "ratelab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-traces, collect, dataset build, train, eval for one seed.
fn pipeline(root: &Path, seed: &str) {
    let traces = root.join("traces");
    let logs = root.join("logs");
    let data = root.join("data");
    let model = root.join("model");
    ok(&["gen-traces", "--seed", seed, "--out", p(&traces), "--n-traces", "5", "--duration-ms", "20000"]);
    let manifest = traces.join("manifest.json");
    ok(&["collect", "--manifest", p(&manifest), "--out", p(&logs), "--jobs", "2"]);
    ok(&["dataset", "build", "--logs", p(&logs.join("logs")), "--out", p(&data)]);
    ok(&[
        "train",
        "--seed",
        seed,
        "--dataset",
        p(&data.join("dataset.bin")),
        "--val-manifest",
        p(&manifest),
        "--out",
        p(&model),
        "--steps",
        "60",
        "--eval-every",
        "30",
        "--batch-size",
        "32",
    ]);
    ok(&[
        "eval",
        "--model",
        p(&model.join("model.bin")),
        "--traces",
        p(&traces),
        "--out",
        p(&root.join("eval_policy")),
    ]);
}

#[test]
fn five_trace_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let t = Instant::now();
    pipeline(&a, "11");
    assert!(t.elapsed() < Duration::from_secs(600), "took {:?}", t.elapsed());
    pipeline(&b, "11");

    for f in ["data/dataset.bin", "model/model.bin", "model/curve.csv", "eval_policy/report.json", "traces/manifest.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs between identical runs");
    }

    let report = json(&a.join("eval_policy/report.json"));
    assert_eq!(report["controller"], "policy");
    assert_eq!(report["per_trace"].as_array().unwrap().len(), 5);
    assert!(a.join("eval_policy/per_trace.csv").exists());
    for stage in ["traces", "model"] {
        let text = std::fs::read_to_string(a.join(stage).join("resolved_config.toml")).unwrap();
        assert!(text.contains("seed = 11"), "{stage}");
    }
    for stage in ["logs", "data", "eval_policy"] {
        assert!(a.join(stage).join("resolved_config.toml").exists(), "{stage}");
    }
    let summary = json(&a.join("model/train.json"));
    assert_eq!(summary["method"], "cql");

    // A report compared with itself has zero deltas everywhere.
    let r = a.join("eval_policy/report.json");
    let cmp = dir.path().join("cmp");
    ok(&["compare", p(&r), p(&r), "--out", p(&cmp)]);
    let deltas = json(&cmp.join("comparison.json"));
    let deltas = deltas["deltas"].as_array().unwrap();
    assert!(!deltas.is_empty());
    assert!(deltas.iter().all(|d| d["delta"].as_f64() == Some(0.0)), "{deltas:?}");

    // Identical datasets do not drift.
    let ds = a.join("data/dataset.bin");
    let drift = dir.path().join("drift");
    ok(&["drift", p(&ds), p(&ds), "--out", p(&drift)]);
    let d = json(&drift.join("drift.json"));
    assert_eq!(d["max_ks"].as_f64(), Some(0.0));
    assert_eq!(d["retrain"], false);
}

#[test]
fn baselines_bc_and_oracle_commands() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let traces = root.join("traces");
    ok(&["gen-traces", "--seed", "3", "--out", p(&traces), "--n-traces", "3", "--duration-ms", "15000"]);
    for c in ["gcc", "gcc-population", "oracle"] {
        let out = root.join(c);
        ok(&["eval", "--controller", c, "--manifest", p(&traces), "--out", p(&out)]);
        assert_eq!(json(&out.join("report.json"))["controller"], c);
    }
    let cmp = root.join("cmp");
    ok(&["compare", p(&root.join("oracle/report.json")), p(&root.join("gcc/report.json")), "--out", p(&cmp)]);
    assert!(std::fs::read_to_string(cmp.join("comparison.csv")).unwrap().lines().count() > 1);

    let logs = root.join("logs");
    ok(&["collect", "--manifest", p(&traces.join("manifest.json")), "--out", p(&logs)]);
    let data = root.join("data");
    ok(&["dataset", "build", "--logs", p(&logs.join("logs")), "--out", p(&data)]);
    let bc = root.join("bc");
    ok(&["train-bc", "--dataset", p(&data.join("dataset.bin")), "--steps", "20", "--out", p(&bc)]);
    assert_eq!(json(&bc.join("train.json"))["method"], "bc");

    let manifest = json(&traces.join("manifest.json"));
    let first = manifest[0]["path"].as_str().unwrap();
    let id = Path::new(first).file_stem().unwrap().to_str().unwrap();
    let orc = root.join("orc");
    ok(&[
        "oracle",
        "--trace",
        p(&traces.join(first)),
        "--ref-log",
        p(&logs.join("logs").join(format!("{id}.json.gz"))),
        "--out",
        p(&orc),
    ]);
    assert_eq!(json(&orc.join("oracle.json"))["trace_id"], id);
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[corpus]\nn_traces = 2\nduration_ms = 12000\n").unwrap();
    let out = dir.path().join("o");
    ok(&["gen-traces", "--config", p(&cfg), "--seed", "6", "--out", p(&out)]);
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 6"));
    assert!(resolved.contains("n_traces = 2"));
    assert!(json(&out.join("manifest.json")).as_array().unwrap().len() <= 2);

    // The frozen config reproduces the run.
    let again = dir.path().join("again");
    ok(&["gen-traces", "--config", p(&out.join("resolved_config.toml")), "--out", p(&again)]);
    assert_eq!(
        std::fs::read(out.join("manifest.json")).unwrap(),
        std::fs::read(again.join("manifest.json")).unwrap()
    );
}

fn assert_json_error(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["error"], kind, "{err}");
    assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn failures_are_structured_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_json_error(&ratelab(&["eval", "--controller", "gcc", "--manifest", "/nonexistent/m.json", "--out", out]), "io");
    assert_json_error(&ratelab(&["collect", "--out", out]), "config");
    let missing = ratelab(&["train", "--dataset", "/nonexistent/d.bin", "--out", out]);
    assert_json_error(&missing, "io");
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/d.bin"));
    assert_json_error(&ratelab(&["train", "--dataset", "x", "--alpha=-1", "--out", out]), "config");
    assert_json_error(&ratelab(&["eval", "--model", "m", "--controller", "gcc"]), "usage");
    assert_json_error(&ratelab(&["frobnicate"]), "usage");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sed = 1\n").unwrap();
    assert_json_error(&ratelab(&["gen-traces", "--config", p(&bad), "--out", out]), "config");
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_json_error(&ratelab(&["dataset", "build", "--logs", p(&empty), "--out", out]), "config");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mimbfd(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mimbfd"));
    cmd.args(args).env_remove("MIMBFD_SEED");
    if let Some(s) = env_seed {
        cmd.env("MIMBFD_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mimbfd(args, None);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic graph in a fresh directory.
fn small_graph(root: &Path) -> PathBuf {
    let dir = root.join("graph");
    ok(&["synth", "--out", s(&dir), "--n", "300", "--feature-dim", "8", "--mean-degree", "6", "--seed", "3"]);
    dir
}

#[test]
fn exit_codes_follow_the_error_kind() {
    assert_eq!(mimbfd(&["--help"], None).status.code(), Some(0));
    assert_eq!(mimbfd(&["train", "--bogus"], None).status.code(), Some(1));
    assert_eq!(mimbfd(&["nonsense"], None).status.code(), Some(1));
    assert_eq!(mimbfd(&[], None).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let missing = mimbfd(&["train", "--out", s(&out), "--graph", "/no/such/graph"], None);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&missing.stderr).is_empty());

    let graph = small_graph(tmp.path());
    let negative = mimbfd(&["train", "--out", s(&out), "--graph", s(&graph), "--eta", "-1"], None);
    assert_eq!(negative.status.code(), Some(1));
    let short_split = mimbfd(&["train", "--out", s(&out), "--graph", s(&graph), "--split", "0.5,0.5"], None);
    assert_eq!(short_split.status.code(), Some(1));
    let nan = mimbfd(&["train", "--out", s(&out), "--graph", s(&graph), "--lr", "1e300", "--epochs", "20"], None);
    assert_eq!(nan.status.code(), Some(2), "{}", String::from_utf8_lossy(&nan.stderr));
    assert!(String::from_utf8_lossy(&nan.stderr).contains("epoch"));
}

#[test]
fn train_writes_every_artifact_and_eval_reproduces_it() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = small_graph(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--out", s(&run), "--graph", s(&graph), "--epochs", "15", "--hidden-dim", "8"]);
    for f in ["report.json", "trace.tsv", "embeddings.tsv", "model.mfd", "config.json", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5);
    let trace = fs::read_to_string(run.join("trace.tsv")).unwrap();
    assert!(trace.starts_with("epoch\ttrain_loss\tval_auc\n"));
    let embeddings = fs::read_to_string(run.join("embeddings.tsv")).unwrap();
    assert_eq!(embeddings.lines().count(), 301);
    assert!(embeddings.starts_with("node_id\tlabel\th_1\t"));

    let eval = tmp.path().join("eval");
    ok(&["eval", "--out", s(&eval), "--graph", s(&graph), "--run", s(&run)]);
    let report = json(&run.join("report.json"));
    let evaluated = json(&eval.join("eval_report.json"));
    assert_eq!(evaluated["metrics"]["auc"], report["auc"]);
    assert_eq!(evaluated["metrics"]["confusion"], report["confusion"]);
    assert_eq!(evaluated["config_hash"], report["config_hash"]);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = small_graph(tmp.path());
    let config = tmp.path().join("cfg.json");
    fs::write(&config, r#"{"eta": 0.3, "epochs": 4, "hidden_dim": 8, "seed": 17}"#).unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--out", s(&run), "--graph", s(&graph), "--config", s(&config), "--eta", "0.1", "--split", "0.5,0.25,0.25"]);
    let used = json(&run.join("config.json"));
    assert_eq!(used["eta"], 0.1);
    assert_eq!(used["split"], serde_json::json!([0.5, 0.25, 0.25]));
    assert_eq!(used["epochs"], 4);
    assert_eq!(used["seed"], 17);
    assert_eq!(json(&run.join("report.json"))["epochs_run"], 4);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = small_graph(tmp.path());
    let base = ["--graph", s(&graph), "--epochs", "2", "--hidden-dim", "4"];

    let env_run = tmp.path().join("env");
    let mut args = vec!["train", "--out", s(&env_run)];
    args.extend(base);
    assert!(mimbfd(&args, Some("42")).status.success());
    assert_eq!(json(&env_run.join("report.json"))["seed"], 42);

    let flag_run = tmp.path().join("flag");
    let mut args = vec!["train", "--out", s(&flag_run), "--seed", "5"];
    args.extend(base);
    assert!(mimbfd(&args, Some("42")).status.success());
    assert_eq!(json(&flag_run.join("report.json"))["seed"], 5);

    let mut args = vec!["train", "--out", s(&flag_run)];
    args.extend(base);
    assert_eq!(mimbfd(&args, Some("not-a-number")).status.code(), Some(1));
}

#[test]
fn eta_zero_equals_the_lcd_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = small_graph(tmp.path());
    let common = ["--graph", s(&graph), "--epochs", "10", "--hidden-dim", "8", "--seed", "2"];
    let a = tmp.path().join("eta0");
    let b = tmp.path().join("ablate");
    let mut args = vec!["train", "--out", s(&a), "--eta", "0"];
    args.extend(common);
    ok(&args);
    let mut args = vec!["ablate", "--without", "lcd", "--out", s(&b)];
    args.extend(common);
    ok(&args);

    let mut ra = json(&a.join("report.json"));
    let mut rb = json(&b.join("report.json"));
    assert_eq!(rb["label"], "ablate-lcd");
    assert_eq!(ra["config_hash"], rb["config_hash"]);
    ra["label"] = Value::Null;
    rb["label"] = Value::Null;
    assert_eq!(ra, rb);
    assert_eq!(
        fs::read(a.join("trace.tsv")).unwrap(),
        fs::read(b.join("trace.tsv")).unwrap()
    );
}

#[test]
fn sweep_writes_one_run_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = small_graph(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&["sweep-eta", "0.1,0.5,1.0", "--out", s(&out), "--graph", s(&graph), "--epochs", "3", "--hidden-dim", "4"]);
    for v in ["0.1", "0.5", "1"] {
        let dir = out.join(format!("eta{v}"));
        assert_eq!(json(&dir.join("report.json"))["label"], format!("sweep-eta-{v}"));
        assert_eq!(json(&dir.join("manifest.json"))["config"]["eta"].as_f64().unwrap().to_string(), v);
    }
    assert_eq!(json(&out.join("summary.json")).as_array().unwrap().len(), 3);
}

#[test]
fn inspection_commands_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = small_graph(tmp.path());
    let gpr = tmp.path().join("gpr");
    ok(&["gpr", "--out", s(&gpr), "--graph", s(&graph)]);
    for rel in ["rel0", "rel1"] {
        let text = fs::read_to_string(gpr.join(format!("gpr_{rel}.tsv"))).unwrap();
        assert!(text.starts_with("node_id\tg_benign\tg_fraud\tp_benign\tp_fraud\n"));
        assert_eq!(text.lines().count(), 301);
    }

    let prof = tmp.path().join("prof");
    let out = ok(&["profile", "--out", s(&prof), "--graph", s(&graph), "--metric", "dc", "--bins", "5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("spearman"));
    let csv = fs::read_to_string(prof.join("profile_dc_union.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let unknown = mimbfd(&["profile", "--out", s(&prof), "--graph", s(&graph), "--relation", "nope"], None);
    assert_eq!(unknown.status.code(), Some(1));
}

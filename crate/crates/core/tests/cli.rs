use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nnif");

fn nnif(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("NNIF_OUT_DIR")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().unwrap_or("null")).unwrap_or(serde_json::Value::Null)
}

const SMALL: &str = r#"
seed = 5
[corpus.source.synthetic]
n_per_class = 600
[attack]
detection_size = 40
[detect]
detectors = ["nnif", "mahal_penult", "mahal_ensemble", "lid"]
lid_k_grid = [10, 20]
[detect.nnif]
m = 5
sample_size = 200
[analysis]
pairs = 3
top_k = 10
m_values = [2, 5]
"#;

#[test]
fn full_small_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.toml"), SMALL).unwrap();
    let run = |args: &[&str]| nnif(d, &[&["--config", "exp.toml", "--out", "run"], args].concat());

    let train = ok(&run(&["train"]));
    let clean = train["clean_accuracy"].as_f64().unwrap();
    assert!(clean > 0.95, "clean accuracy {clean}");
    let ckpt = fs::read(d.join("run/model.json")).unwrap();

    let attack = ok(&run(&["attack"]));
    let success = attack["success_rate"].as_f64().unwrap();
    assert!(success > 0.0);
    assert!(attack["accuracy_under_attack"].as_f64().unwrap() < clean);
    let ds = nnif::attacks::DetectionDataset::read_jsonl(d.join("run/detection.jsonl")).unwrap();
    assert_eq!(ds.records.len(), 40);

    ok(&run(&["detect"]));
    let csv = fs::read_to_string(d.join("run/detection.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert!(lines.next().unwrap().starts_with("detector,accuracy,auc"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().any(|r| r.starts_with("nnif,")));
    for name in ["nnif", "mahal_penult", "mahal_ensemble", "lid"] {
        let json = fs::read_to_string(d.join(format!("run/metrics/{name}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["accuracy"].is_number() && v["auc"].is_number() && v["config_hash"].is_string());
    }

    ok(&run(&["detect"]));
    assert_eq!(fs::read_to_string(d.join("run/detection.csv")).unwrap(), csv);

    ok(&run(&["analyze"]));
    let sweep = fs::read_to_string(d.join("run/m_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().nth(1), Some("M,accuracy"));
    assert_eq!(sweep.lines().count(), 4);
    let sep: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/separability.json")).unwrap()).unwrap();
    assert!(sep["p_value"].is_number());
    assert!(d.join("run/scenes/pair_0000_if.csv").exists());

    ok(&run(&["report"]));
    let md = fs::read_to_string(d.join("run/report.md")).unwrap();
    assert!(md.contains("| nnif |"));

    ok(&nnif(d, &["--config", "exp.toml", "--out", "again", "train"]));
    assert_eq!(fs::read(d.join("again/model.json")).unwrap(), ckpt);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("missing.toml"),
        "seed = 1\n[corpus.source.file]\npath = \"nowhere.jsonl\"\n",
    )
    .unwrap();
    let out = nnif(d, &["--config", "missing.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    fs::write(d.join("noseed.toml"), "[attack]\nkind = \"char\"\n").unwrap();
    assert_eq!(nnif(d, &["--config", "noseed.toml", "train"]).status.code(), Some(2));
    assert_eq!(nnif(d, &["train"]).status.code(), Some(2));
}

#[test]
fn checkpoint_vocab_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.toml"), "seed = 2\n[corpus.source.synthetic]\nn_per_class = 150\n").unwrap();
    fs::write(d.join("b.toml"), "seed = 3\n[corpus.source.synthetic]\nn_per_class = 150\n").unwrap();
    ok(&nnif(d, &["--config", "a.toml", "--out", "a", "train"]));
    let out = nnif(d, &["--config", "b.toml", "--out", "b", "attack", "--checkpoint", "a/model.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn seed_flag_and_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.toml"), "seed = 2\n[corpus.source.synthetic]\nn_per_class = 150\n").unwrap();
    let out = Command::new(BIN)
        .current_dir(d)
        .env("NNIF_OUT_DIR", "from_env")
        .args(["--config", "exp.toml", "--seed", "9", "--threads", "1", "train"])
        .output()
        .unwrap();
    ok(&out);
    let report = fs::read_to_string(d.join("from_env/train.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["seed"], 9);
}

#[test]
fn default_char_attack_reports_success_above_0_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.toml"), "seed = 7\n").unwrap();
    let run = |cmd: &str| nnif(d, &["--config", "exp.toml", "--out", "run", cmd]);
    let clean = ok(&run("train"))["clean_accuracy"].as_f64().unwrap();
    assert!(clean > 0.95, "clean accuracy {clean}");
    let attack = ok(&run("attack"));
    let success = attack["success_rate"].as_f64().unwrap();
    assert!(success > 0.3, "char attack success rate {success}");
    assert!(attack["accuracy_under_attack"].as_f64().unwrap() < clean);
}

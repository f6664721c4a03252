use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const POS: &str =
    "a great fun film\nlovely and smart\nbest movie ever\ncharming , witty story\nsuperb cast\nvivid and moving\n";
const NEG: &str = "dull and boring\nworst mess\nflat , tired plot\nweak script\nlame and bland\npointless waste\n";

const TINY: &str = r#"{"hidden_size": 4, "filter_maps": 3, "embedding_dim": 8, "epochs": 3,
    "filter_sizes": [2, 3], "dev_fraction": 0.25, "attention_dim": 3}"#;

fn mahnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mahnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("pos.txt"), POS).unwrap();
        fs::write(ws.path("neg.txt"), NEG).unwrap();
        fs::write(ws.path("tiny.json"), TINY).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn corpus(&self) -> PathBuf {
        let out = self.path("all.tsv");
        if !out.exists() {
            let o = mahnn(&[
                "convert",
                "--class-file",
                arg(&self.path("neg.txt")),
                "--class-file",
                arg(&self.path("pos.txt")),
                "--out",
                arg(&out),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
        out
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let dir = self.path(out);
        let data = self.corpus();
        let config = self.path("tiny.json");
        let mut args = vec![
            "train",
            "--data",
            arg(&data),
            "--out",
            arg(&dir),
            "--config",
            arg(&config),
        ];
        args.extend_from_slice(extra);
        let o = mahnn(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dir
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn convert_builds_tsv_from_class_files() {
    let ws = Workspace::new();
    let text = fs::read_to_string(ws.corpus()).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.starts_with("0\tdull and boring\n"));
    assert!(text.contains("1\tsuperb cast\n"));
}

#[test]
fn convert_label_first_lines() {
    let ws = Workspace::new();
    fs::write(ws.path("raw.txt"), "1 good film\n0 bad  film\n\n").unwrap();
    let out = ws.path("conv.tsv");
    let o = mahnn(&["convert", "--label-first", arg(&ws.path("raw.txt")), "--out", arg(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out).unwrap(), "1\tgood film\n0\tbad  film\n");
}

#[test]
fn train_writes_checkpoint_metrics_and_manifest() {
    let ws = Workspace::new();
    let dir = ws.train("run", &["--seed", "3"]);
    for f in ["config.json", "vocab.txt", "params.bin", "params.json", "rng.json"] {
        assert!(dir.join("checkpoint").join(f).is_file(), "{f}");
    }
    let report = json(&dir.join("report.json"));
    assert_eq!(report["variant"], "MahNN-3");
    let epochs = report["epochs_run"].as_u64().unwrap() as usize;
    let metrics = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), epochs);
    let first: Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);

    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config"]["hidden_size"], 4);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.len() >= 7);
    for o in outputs {
        let bytes = fs::read(o["path"].as_str().unwrap()).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn same_seed_gives_identical_parameters_regardless_of_threads() {
    let ws = Workspace::new();
    let a = ws.train("a", &["--seed", "5"]);
    let data = ws.corpus();
    let b = ws.path("b");
    let o = Command::new(env!("CARGO_BIN_EXE_mahnn"))
        .args([
            "train",
            "--data",
            arg(&data),
            "--out",
            arg(&b),
            "--config",
            arg(&ws.path("tiny.json")),
            "--seed",
            "5",
        ])
        .env("MAHNN_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success());
    let pa = fs::read(a.join("checkpoint/params.bin")).unwrap();
    let pb = fs::read(b.join("checkpoint/params.bin")).unwrap();
    assert_eq!(pa, pb);
    let losses = |dir: &Path| -> Vec<Value> {
        fs::read_to_string(dir.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["train_loss"].clone())
            .collect()
    };
    assert_eq!(losses(&a), losses(&b));
}

#[test]
fn eval_matches_training_report_precision_f32() {
    let ws = Workspace::new();
    let dir = ws.train("run32", &["--precision", "f32", "--channels", "1"]);
    let manifest = json(&dir.join("checkpoint/params.json"));
    assert_eq!(manifest["dtype"], "f32");
    let out = ws.path("eval");
    let o = mahnn(&[
        "eval",
        "--model",
        arg(&dir.join("checkpoint")),
        "--data",
        arg(&ws.corpus()),
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("eval.json"));
    assert_eq!(report["variant"], "MahNN-1");
    assert_eq!(report["examples"], 12);
    assert_eq!(report["predictions"].as_array().unwrap().len(), 12);
    assert!(String::from_utf8_lossy(&o.stdout).contains("accuracy"));
}

#[test]
fn attention_export_is_byte_identical_across_runs() {
    let ws = Workspace::new();
    let dir = ws.train("run", &[]);
    let model = dir.join("checkpoint");
    let export = |name: &str| {
        let out = ws.path(name);
        let o = mahnn(&[
            "attn",
            "--model",
            arg(&model),
            "--data",
            arg(&ws.corpus()),
            "--out",
            arg(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (export("attn_a"), export("attn_b"));
    let ja = fs::read(a.join("attention.jsonl")).unwrap();
    assert_eq!(ja, fs::read(b.join("attention.jsonl")).unwrap());
    let text = String::from_utf8(ja).unwrap();
    assert_eq!(text.lines().count(), 12);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["tokens"], serde_json::json!(["dull", "and", "boring"]));
    assert_eq!(first["channels"].as_array().unwrap().len(), 3);
    let csv_a = fs::read(a.join("csv/line_00003.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("csv/line_00003.csv")).unwrap());
    let csv = String::from_utf8(csv_a).unwrap();
    assert!(csv.starts_with("token,syn_1,syn_2,syn_3,sem_1,sem_2,sem_3\n"));
    assert!(csv.contains("\n\",\","));
}

#[test]
fn attention_of_single_token_is_one() {
    let ws = Workspace::new();
    let dir = ws.train("run", &["--rv"]);
    fs::write(ws.path("one.txt"), "superb\n").unwrap();
    let out = ws.path("attn");
    let o = mahnn(&[
        "attn",
        "--model",
        arg(&dir.join("checkpoint")),
        "--data",
        arg(&ws.path("one.txt")),
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success());
    let rec: Value = serde_json::from_str(fs::read_to_string(out.join("attention.jsonl")).unwrap().trim()).unwrap();
    for ch in rec["channels"].as_array().unwrap() {
        let a = ch["syntactic"][0].as_f64().unwrap();
        assert!((a - 1.0).abs() < 1e-12, "{a}");
        assert_eq!(ch["semantic"][0].as_f64().unwrap(), 1.0);
    }
}

#[test]
fn gradcheck_passes_and_corruption_exits_4() {
    let ws = Workspace::new();
    let out = ws.path("gc");
    let ok = mahnn(&["gradcheck", "--out", arg(&out)]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let report = json(&out.join("gradcheck.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["groups"].as_array().unwrap().len(), 9);

    let bad = mahnn(&["gradcheck", "--corrupt-tanh-grad"]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("verification failed"));

    let frozen = mahnn(&["gradcheck", "--freeze-embedding", "--rv"]);
    assert!(frozen.status.success());
    assert!(!String::from_utf8_lossy(&frozen.stdout).contains("embedding"));
}

#[test]
fn config_errors_are_listed_together_before_any_output() {
    let ws = Workspace::new();
    fs::write(
        ws.path("bad.json"),
        r#"{"hidden_size": "x", "dropout": 2, "colour": 1}"#,
    )
    .unwrap();
    let out = ws.path("never");
    let o = mahnn(&[
        "train",
        "--data",
        arg(&ws.corpus()),
        "--out",
        arg(&out),
        "--config",
        arg(&ws.path("bad.json")),
        "--channels",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for needle in ["colour", "hidden_size", "dropout", "channels", "4 problems"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
    assert!(!out.exists());
}

#[test]
fn data_errors_exit_3() {
    let ws = Workspace::new();
    let missing = mahnn(&[
        "train",
        "--data",
        arg(&ws.path("nope.tsv")),
        "--out",
        arg(&ws.path("o")),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    fs::write(ws.path("notab.tsv"), "0\tfine\nno tab here\n").unwrap();
    let o = mahnn(&[
        "train",
        "--data",
        arg(&ws.path("notab.tsv")),
        "--out",
        arg(&ws.path("o")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let names = mahnn(&[
        "train",
        "--data",
        arg(&ws.corpus()),
        "--out",
        arg(&ws.path("o")),
        "--labels",
        "neg,pos",
    ]);
    assert_eq!(names.status.code(), Some(3));
    assert!(!ws.path("o").exists());
}

#[test]
fn cv_reports_every_fold() {
    let ws = Workspace::new();
    let out = ws.path("cv");
    let o = mahnn(&[
        "cv",
        "--data",
        arg(&ws.corpus()),
        "--out",
        arg(&out),
        "--config",
        arg(&ws.path("tiny.json")),
        "--k",
        "3",
        "--epochs",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("cv.json"));
    assert_eq!(report["k"], 3);
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 3);
    let tested: u64 = folds.iter().map(|f| f["test_size"].as_u64().unwrap()).sum();
    assert_eq!(tested, 12);
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let folds_seen: Vec<u64> = metrics
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["fold"].as_u64().unwrap())
        .collect();
    assert_eq!(folds_seen, vec![1, 2, 3]);
    assert!(fs::read_to_string(out.join("cv.txt")).unwrap().contains("mean"));
}

#[test]
fn k_below_two_is_a_config_error() {
    let ws = Workspace::new();
    let o = mahnn(&[
        "cv",
        "--data",
        arg(&ws.corpus()),
        "--out",
        arg(&ws.path("cv")),
        "--k",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

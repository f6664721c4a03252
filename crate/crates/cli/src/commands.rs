use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use mahnn::data::{
    convert_label_first, convert_per_class_files, decode_lossy, load_tsv, tokenize, Corpus, LabelSchema, LoadReport,
    Part,
};
use mahnn::embeddings::Vocabulary;
use mahnn::export::{attention_record, write_csv, write_jsonl};
use mahnn::model::Mahnn;
use mahnn::tensor::{Dtype, Real};
use mahnn::training::checkpoint::write_atomic;
use mahnn::training::{
    derive_seed, encode_examples, evaluate, kfold_cv, load, save, stored_dtype, train_fixed, EpochMetrics, TrainConfig,
};
use mahnn::verify::{check_model_gradients, GradCheckOptions, GRADCHECK_TOLERANCE};

use crate::args::{AttnArgs, ConfigArgs, ConvertArgs, CvArgs, EvalArgs, GradcheckArgs, TrainArgs};
use crate::failure::Failure;
use crate::manifest::{Recorder, MANIFEST_FILE};

type Outcome = Result<(), Failure>;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CV_FILE: &str = "cv.json";
pub const CV_TABLE_FILE: &str = "cv.txt";
pub const EVAL_FILE: &str = "eval.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const ATTENTION_FILE: &str = "attention.jsonl";
pub const ATTENTION_CSV_DIR: &str = "csv";

/// Defaults, then the config file, then flags; all problems are reported
/// together.
pub fn resolve_config(args: &ConfigArgs, k: Option<usize>) -> Result<TrainConfig, Failure> {
    let mut value = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(vec![format!("cannot read `{}`: {e}", path.display())]))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Failure::Config(vec![format!("`{}` is not valid JSON: {e}", path.display())]))?
        }
        None => json!({}),
    };
    let Value::Object(map) = &mut value else {
        return Err(Failure::Config(vec!["configuration must be a JSON object".into()]));
    };
    if let Some(seed) = args.seed {
        map.insert("seed".into(), json!(seed));
    }
    if let Some(p) = args.precision {
        map.insert("precision".into(), json!(p.as_str()));
    }
    if let Some(c) = args.channels {
        map.insert("channels".into(), json!(c));
    }
    if args.rv {
        map.insert("rv".into(), json!(true));
    }
    if let Some(e) = args.epochs {
        map.insert("epochs".into(), json!(e));
    }
    if let Some(labels) = &args.labels {
        map.insert("labels".into(), json!(labels));
    }
    if let Some(k) = k {
        map.insert("k".into(), json!(k));
    }
    Ok(TrainConfig::from_value(&value)?)
}

fn schema(cfg: &TrainConfig) -> LabelSchema {
    match &cfg.labels {
        Some(names) => LabelSchema::Names(names.clone()),
        None => LabelSchema::Integer { classes: None },
    }
}

fn load_corpus(path: &Path, schema: &LabelSchema) -> Result<(Corpus, LoadReport), Failure> {
    let file = File::open(path).map_err(|e| Failure::data(path.display(), e))?;
    let (corpus, report) = load_tsv(BufReader::new(file), schema).map_err(|e| Failure::data(path.display(), e))?;
    for r in &report.rejected {
        log::warn!("{}:{}: {}", path.display(), r.line, r.reason);
    }
    if corpus.is_empty() {
        return Err(Failure::data(path.display(), "no usable examples"));
    }
    Ok((corpus, report))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir.display(), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    write_atomic(path, &bytes).map_err(Failure::from)
}

fn finish(recorder: Recorder, path: &Path) -> Outcome {
    recorder.finish(path).map_err(|e| Failure::io(path.display(), e))
}

/// Line-buffered `metrics.jsonl` writer.
struct MetricsLog {
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self, Failure> {
        let file = File::create(path).map_err(|e| Failure::io(path.display(), e))?;
        Ok(MetricsLog {
            out: BufWriter::new(file),
            error: None,
        })
    }

    fn record(&mut self, fold: Option<usize>, m: &EpochMetrics) {
        let mut value = serde_json::to_value(m).expect("metrics serialize");
        if let (Some(f), Value::Object(map)) = (fold, &mut value) {
            map.insert("fold".into(), json!(f));
        }
        let line = format!("{value}\n");
        if let Err(e) = self.out.write_all(line.as_bytes()).and_then(|_| self.out.flush()) {
            self.error.get_or_insert(e);
        }
    }

    fn close(self, path: &Path) -> Outcome {
        match self.error {
            Some(e) => Err(Failure::io(path.display(), e)),
            None => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct TrainReport {
    variant: String,
    precision: Dtype,
    train_size: usize,
    dev_size: usize,
    test_size: usize,
    vocab_size: usize,
    seq_len: usize,
    pretrained_matched: usize,
    best_epoch: usize,
    epochs_run: usize,
    stopped_early: bool,
    final_train_accuracy: Option<f64>,
    best_dev_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    test_loss: Option<f64>,
    data: LoadReport,
}

pub fn train(args: &TrainArgs) -> Outcome {
    let cfg = resolve_config(&args.config, None)?;
    let schema = schema(&cfg);
    let mut recorder = Recorder::new("train");
    let (mut corpus, report) = load_corpus(&args.data, &schema)?;
    recorder.input(&args.data);
    for (path, part) in [(&args.dev, Part::Dev), (&args.test, Part::Test)] {
        if let Some(path) = path {
            let (extra, _) = load_corpus(path, &schema)?;
            corpus
                .append(extra, part)
                .map_err(|e| Failure::data(path.display(), e))?;
            recorder.input(path);
        }
    }
    if let Some(path) = &cfg.embeddings {
        recorder.input(Path::new(path));
    }
    create_dir(&args.out)?;
    match cfg.precision {
        Dtype::F64 => train_with::<f64>(args, &cfg, &corpus, report, recorder),
        Dtype::F32 => train_with::<f32>(args, &cfg, &corpus, report, recorder),
    }
}

fn train_with<T: Real>(
    args: &TrainArgs,
    cfg: &TrainConfig,
    corpus: &Corpus,
    data: LoadReport,
    mut recorder: Recorder,
) -> Outcome {
    let metrics_path = args.out.join(METRICS_FILE);
    let mut metrics = MetricsLog::create(&metrics_path)?;
    let run = train_fixed::<T>(corpus, cfg, |m| metrics.record(None, m))?;
    metrics.close(&metrics_path)?;
    recorder.output(&metrics_path);

    let model = &run.outcome.model;
    let rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, run.outcome.history.len() as u64]));
    let files = save(&args.out.join(CHECKPOINT_DIR), model, &run.vocab, cfg, &rng)?;
    recorder.outputs(files);

    let history = &run.outcome.history;
    let report = TrainReport {
        variant: model.config.variant_name(),
        precision: T::DTYPE,
        train_size: run.fold.train.len(),
        dev_size: run.fold.dev.len(),
        test_size: run.fold.test.len(),
        vocab_size: run.vocab.len(),
        seq_len: model.config.seq_len,
        pretrained_matched: run.pretrained_matched,
        best_epoch: run.outcome.best_epoch,
        epochs_run: history.len(),
        stopped_early: run.outcome.stopped_early,
        final_train_accuracy: history.last().map(|m| m.train_accuracy),
        best_dev_accuracy: history.iter().filter_map(|m| m.dev_accuracy).reduce(f64::max),
        test_accuracy: run.test.as_ref().map(|t| t.accuracy),
        test_loss: run.test.as_ref().map(|t| t.loss),
        data,
    };
    let report_path = args.out.join(REPORT_FILE);
    write_json(&report_path, &report)?;
    recorder.output(&report_path);

    println!(
        "{}: {} epochs (best {}), train accuracy {:.4}{}",
        report.variant,
        report.epochs_run,
        report.best_epoch,
        report.final_train_accuracy.unwrap_or(0.0),
        report
            .test_accuracy
            .map(|a| format!(", test accuracy {a:.4}"))
            .unwrap_or_default()
    );
    recorder.config = Some(serde_json::to_value(cfg).expect("config serializes"));
    recorder.seed = Some(cfg.seed);
    finish(recorder, &args.out.join(MANIFEST_FILE))
}

pub fn cv(args: &CvArgs) -> Outcome {
    let cfg = resolve_config(&args.config, args.k)?;
    let (corpus, _) = load_corpus(&args.data, &schema(&cfg))?;
    let mut recorder = Recorder::new("cv");
    recorder.input(&args.data);
    create_dir(&args.out)?;
    let metrics_path = args.out.join(METRICS_FILE);
    let mut metrics = MetricsLog::create(&metrics_path)?;
    let report = match cfg.precision {
        Dtype::F64 => kfold_cv::<f64>(&corpus, &cfg, cfg.k, |f, m| metrics.record(Some(f), m)),
        Dtype::F32 => kfold_cv::<f32>(&corpus, &cfg, cfg.k, |f, m| metrics.record(Some(f), m)),
    }?;
    metrics.close(&metrics_path)?;
    recorder.output(&metrics_path);
    let json_path = args.out.join(CV_FILE);
    write_json(&json_path, &report)?;
    let table_path = args.out.join(CV_TABLE_FILE);
    write_atomic(&table_path, report.table().as_bytes())?;
    recorder.output(&json_path);
    recorder.output(&table_path);
    print!("{}", report.table());
    recorder.config = Some(serde_json::to_value(&cfg).expect("config serializes"));
    recorder.seed = Some(cfg.seed);
    finish(recorder, &args.out.join(MANIFEST_FILE))
}

fn read_input(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(path.display(), e))?;
    let (text, replaced) = decode_lossy(&bytes);
    if replaced > 0 {
        log::warn!("{}: replaced {replaced} invalid UTF-8 sequences", path.display());
    }
    Ok(text)
}

#[derive(Serialize)]
struct EvalReport {
    variant: String,
    examples: usize,
    accuracy: f64,
    loss: f64,
    predictions: Vec<usize>,
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let dtype = stored_dtype(&args.model)?;
    match dtype {
        Dtype::F64 => eval_with::<f64>(args),
        Dtype::F32 => eval_with::<f32>(args),
    }
}

fn eval_with<T: Real>(args: &EvalArgs) -> Outcome {
    let loaded = load::<T>(&args.model)?;
    let schema = match &loaded.config.train.labels {
        Some(names) => LabelSchema::Names(names.clone()),
        None => LabelSchema::Integer {
            classes: Some(loaded.model.config.classes),
        },
    };
    let (corpus, _) = load_corpus(&args.data, &schema)?;
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let examples = encode_examples(&corpus, &indices, &loaded.vocab, loaded.model.config.seq_len)?;
    let result = evaluate(&loaded.model, &examples)?;
    println!(
        "{}: accuracy {:.4}, loss {:.4} on {} examples",
        loaded.config.variant,
        result.accuracy,
        result.loss,
        examples.len()
    );
    if let Some(out) = &args.out {
        let mut recorder = Recorder::new("eval");
        recorder.input(&args.data);
        recorder.input(&args.model.join(mahnn::training::checkpoint::PARAMS_FILE));
        create_dir(out)?;
        let path = out.join(EVAL_FILE);
        write_json(
            &path,
            &EvalReport {
                variant: loaded.config.variant.clone(),
                examples: examples.len(),
                accuracy: result.accuracy,
                loss: result.loss,
                predictions: result.predictions,
            },
        )?;
        recorder.output(&path);
        finish(recorder, &out.join(MANIFEST_FILE))?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome {
    let opts = GradCheckOptions {
        seed: args.seed,
        rv: args.rv,
        freeze_embedding: args.freeze_embedding,
        corrupt_tanh_grad: args.corrupt_tanh_grad,
        ..GradCheckOptions::default()
    };
    let report = check_model_gradients(&opts)?;
    println!("{:<12} {:>14}  status", "group", "max rel err");
    for g in &report.groups {
        println!(
            "{:<12} {:>14.3e}  {}",
            g.group,
            g.max_relative_error,
            if g.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} entries checked, {} skipped at kinks, tolerance {GRADCHECK_TOLERANCE:e}",
        report.entries_checked, report.kinks_skipped
    );
    if let Some(out) = &args.out {
        let mut recorder = Recorder::new("gradcheck");
        recorder.seed = Some(args.seed);
        create_dir(out)?;
        let path = out.join(GRADCHECK_FILE);
        write_json(&path, &report)?;
        recorder.output(&path);
        finish(recorder, &out.join(MANIFEST_FILE))?;
    }
    if report.passed {
        Ok(())
    } else {
        let worst = report
            .worst
            .map(|w| {
                format!(
                    " (worst: {}[{}] analytic {:e} vs numeric {:e})",
                    w.name, w.index, w.analytic, w.numeric
                )
            })
            .unwrap_or_default();
        Err(Failure::Verification(format!(
            "max relative error {:e} exceeds {GRADCHECK_TOLERANCE:e}{worst}",
            report.max_relative_error
        )))
    }
}

pub fn attn(args: &AttnArgs) -> Outcome {
    match stored_dtype(&args.model)? {
        Dtype::F64 => attn_with::<f64>(args),
        Dtype::F32 => attn_with::<f32>(args),
    }
}

/// Sentences of an input file as `(line, tokens)`; a leading `label<TAB>`
/// is dropped.
pub fn sentences(text: &str) -> Vec<(usize, Vec<String>)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let body = line.split_once('\t').map_or(line, |(_, b)| b);
            let tokens = tokenize(body);
            if tokens.is_empty() {
                None
            } else {
                Some((i + 1, tokens))
            }
        })
        .collect()
}

fn export_records<T: Real>(
    model: &Mahnn<T>,
    vocab: &Vocabulary,
    text: &str,
    limit: Option<usize>,
) -> Result<Vec<mahnn::export::AttentionRecord>, Failure> {
    sentences(text)
        .into_iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|(line, tokens)| attention_record(model, vocab, line, &tokens).map_err(Failure::from))
        .collect()
}

fn attn_with<T: Real>(args: &AttnArgs) -> Outcome {
    let loaded = load::<T>(&args.model)?;
    let text = read_input(&args.data)?;
    let records = export_records(&loaded.model, &loaded.vocab, &text, args.limit)?;
    if records.is_empty() {
        return Err(Failure::data(args.data.display(), "no sentences"));
    }
    let mut recorder = Recorder::new("attn");
    recorder.input(&args.data);
    recorder.input(&args.model.join(mahnn::training::checkpoint::PARAMS_FILE));
    let csv_dir = args.out.join(ATTENTION_CSV_DIR);
    create_dir(&csv_dir)?;
    let mut jsonl = Vec::new();
    write_jsonl(&records, &mut jsonl)?;
    let jsonl_path = args.out.join(ATTENTION_FILE);
    write_atomic(&jsonl_path, &jsonl)?;
    recorder.output(&jsonl_path);
    for r in &records {
        let mut bytes = Vec::new();
        write_csv(r, &mut bytes)?;
        let path: PathBuf = csv_dir.join(format!("line_{:05}.csv", r.line));
        write_atomic(&path, &bytes)?;
        recorder.output(&path);
    }
    println!(
        "exported attention for {} sentences to {}",
        records.len(),
        args.out.display()
    );
    finish(recorder, &args.out.join(MANIFEST_FILE))
}

pub fn convert(args: &ConvertArgs) -> Outcome {
    let mut recorder = Recorder::new("convert");
    let (text, replaced) = if let Some(path) = &args.label_first {
        let bytes = fs::read(path).map_err(|e| Failure::data(path.display(), e))?;
        recorder.input(path);
        convert_label_first(&bytes).map_err(|e| Failure::data(path.display(), e))?
    } else {
        let mut files = Vec::with_capacity(args.class_file.len());
        for path in &args.class_file {
            files.push(fs::read(path).map_err(|e| Failure::data(path.display(), e))?);
            recorder.input(path);
        }
        let slices: Vec<&[u8]> = files.iter().map(Vec::as_slice).collect();
        convert_per_class_files(&slices)
    };
    if replaced > 0 {
        log::warn!("replaced {replaced} invalid UTF-8 sequences");
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_atomic(&args.out, text.as_bytes())?;
    recorder.output(&args.out);
    println!("wrote {} examples to {}", text.lines().count(), args.out.display());
    let mut manifest = args.out.as_os_str().to_owned();
    manifest.push(".manifest.json");
    finish(recorder, Path::new(&manifest))
}

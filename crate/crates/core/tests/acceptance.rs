//! One PASS/FAIL line per acceptance criterion. Set `MAHNN_MR_TSV` to a
//! `label<TAB>text` file to run the cross-validation criterion on real data
//! instead of the synthetic sentiment corpus.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::naive;
use common::{random_config, random_input, random_model, small_train_config};
use mahnn::attention::{Mode, SemanticAxis};
use mahnn::data::{load_tsv, Corpus, LabelSchema};
use mahnn::export::{attention_record, write_csv, write_jsonl};
use mahnn::synthetic::{keyword_corpus, sentiment_corpus};
use mahnn::tensor::{Dtype, Tape};
use mahnn::training::{
    checkpoint, encode_examples, kfold_cv, load, prepare_model, save, train, TrainConfig, TrainOutcome,
};
use mahnn::verify::{check_model_gradients, GradCheckOptions, GRADCHECK_TOLERANCE};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const INVARIANT_INPUTS: usize = 1000;
const INVARIANT_BUDGET: Duration = Duration::from_secs(30);
const ORACLE_CASES: u32 = 512;
const KEYWORD_BUDGET: Duration = Duration::from_secs(5 * 60);
const CV_THRESHOLD: f64 = 0.65;
const CV_BUDGET: Duration = Duration::from_secs(30 * 60);

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn gradcheck() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut groups = 0;
    let mut ok = true;
    let mut kinks = (0, 0);
    for rv in [false, true] {
        let report = check_model_gradients(&GradCheckOptions {
            rv,
            ..GradCheckOptions::default()
        })
        .expect("gradcheck runs");
        worst = worst.max(report.max_relative_error);
        groups += report.groups.len();
        kinks.0 += report.kinks_skipped;
        kinks.1 += report.entries_checked;
        ok &= report
            .groups
            .iter()
            .all(|g| g.max_relative_error <= GRADCHECK_TOLERANCE);
    }
    let elapsed = start.elapsed();
    let kinks_ok = kinks.0 * 100 <= kinks.1;
    outcome(
        ok && kinks_ok && elapsed < GRADCHECK_BUDGET,
        format!(
            "max rel err {worst:.2e} over {groups} groups (tol {GRADCHECK_TOLERANCE:.0e}), {}/{} kinks skipped, {:.1}s",
            kinks.0,
            kinks.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_syn, mut worst_sem, mut worst_pad, mut negative) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for i in 0..INVARIANT_INPUTS {
        let rv = i % 4 == 3;
        let config = random_config(&mut rng, rv);
        let n = config.seq_len;
        let axis = config.semantic_axis;
        let model = random_model(config, rng.gen_range(0.1..3.0), rng.gen());
        let pads = rng.gen_range(0..n);
        let (ids, pad) = random_input(&mut rng, n, 8, pads);
        let mode = if i % 2 == 0 { Mode::Train } else { Mode::Infer };
        let noise = model.sample_noise(mode, &mut rng).expect("noise");
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, &ids, &pad, &noise).expect("forward");
        for (a, s) in fwd.attention.syntactic.iter().zip(&fwd.attention.semantic) {
            let a = tape.value(*a).data();
            worst_syn = worst_syn.max((a.iter().sum::<f64>() - 1.0).abs());
            negative += a.iter().filter(|&&v| v < 0.0).count();
            for (v, &p) in a.iter().zip(&pad) {
                if p {
                    worst_pad = worst_pad.max(*v);
                }
            }
            if let Some(s) = s {
                let s = tape.value(*s);
                let (rows, cols) = s.dims2();
                let sums: Vec<f64> = match axis {
                    SemanticAxis::Positions => (0..cols)
                        .map(|k| (0..rows).map(|i| s.data()[i * cols + k]).sum())
                        .collect(),
                    SemanticAxis::Dimensions => (0..rows).map(|i| s.row_slice(i).iter().sum()).collect(),
                };
                for t in sums {
                    worst_sem = worst_sem.max((t - 1.0).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_syn <= 1e-9 && negative == 0 && worst_pad <= 1e-12 && worst_sem <= 1e-9 && elapsed < INVARIANT_BUDGET,
        format!(
            "{INVARIANT_INPUTS} inputs: |Σa-1| ≤ {worst_syn:.1e}, {negative} negative, pad weight ≤ {worst_pad:.1e}, |Σā-1| ≤ {worst_sem:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: ORACLE_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&naive::cases(), |case| naive::check(&case));
    let detail = match &result {
        Ok(()) => format!(
            "{ORACLE_CASES} cases (n ≤ 4, 2h ≤ 4) within {:.0e}, {:.1}s",
            naive::TOLERANCE,
            start.elapsed().as_secs_f64()
        ),
        Err(e) => format!("{e}"),
    };
    outcome(result.is_ok(), detail)
}

fn keyword_variant(cfg: &TrainConfig) -> (String, f64, usize) {
    let corpus = keyword_corpus(200, 1);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let prepared = prepare_model::<f64>(cfg, &corpus, &all).expect("prepare");
    let variant = prepared.model.config.variant_name();
    let examples = encode_examples(&corpus, &all, &prepared.vocab, prepared.model.config.seq_len).expect("encode");
    let out = train(prepared.model, &examples, &[], cfg, |_| {}).expect("train");
    let last = out.history.last().expect("one epoch");
    (variant, last.train_accuracy, last.epoch)
}

fn keywords() -> Outcome {
    let start = Instant::now();
    let base = TrainConfig {
        epochs: 50,
        target_train_accuracy: Some(1.0),
        ..TrainConfig::default()
    };
    let runs = [
        (base.clone(), 1.0),
        (
            TrainConfig {
                channels: 1,
                ..base.clone()
            },
            0.99,
        ),
        (
            TrainConfig {
                rv: true,
                ..base.clone()
            },
            0.99,
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (cfg, need) in runs {
        let (variant, acc, epochs) = keyword_variant(&cfg);
        ok &= acc >= need;
        parts.push(format!("{variant} {:.1}% @ epoch {epochs}", 100.0 * acc));
    }
    let elapsed = start.elapsed();
    if !ok {
        let (variant, acc, epochs) = keyword_variant(&TrainConfig {
            channels: 1,
            l2: 0.0,
            ..base
        });
        parts.push(format!(
            "diagnostic: {variant} with l2=0 {:.1}% @ epoch {epochs}",
            100.0 * acc
        ));
    }
    outcome(
        ok && elapsed < KEYWORD_BUDGET,
        format!("{}, {:.1}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn cross_validation() -> Outcome {
    let (corpus, source): (Corpus, String) = match std::env::var("MAHNN_MR_TSV") {
        Ok(path) => {
            let file = std::fs::File::open(&path).expect("MAHNN_MR_TSV is readable");
            (
                load_tsv(file, &LabelSchema::default()).expect("MAHNN_MR_TSV parses").0,
                path,
            )
        }
        Err(_) => (sentiment_corpus(2000, 0.8, 1), "synthetic sentiment corpus".into()),
    };
    let cfg = TrainConfig {
        l2: 0.0,
        hidden_size: 50,
        filter_maps: 50,
        embedding_dim: 50,
        epochs: 8,
        patience: 3,
        precision: Dtype::F32,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = kfold_cv::<f32>(&corpus, &cfg, 10, |_, _| {}).expect("cv");
    let elapsed = start.elapsed();
    outcome(
        report.mean_accuracy >= CV_THRESHOLD && elapsed < CV_BUDGET,
        format!(
            "{} on {} examples ({source}): mean {:.2}% ± {:.2}, {:.0}s",
            report.variant,
            corpus.len(),
            100.0 * report.mean_accuracy,
            100.0 * report.std_accuracy,
            elapsed.as_secs_f64()
        ),
    )
}

fn train_on_keywords(threads: usize) -> (TrainOutcome<f64>, mahnn::embeddings::Vocabulary, Corpus) {
    let cfg = small_train_config();
    let corpus = keyword_corpus(60, 3);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("pool");
    pool.install(|| {
        let prepared = prepare_model::<f64>(&cfg, &corpus, &all).expect("prepare");
        let examples = encode_examples(&corpus, &all, &prepared.vocab, prepared.model.config.seq_len).expect("encode");
        let out = train(prepared.model, &examples, &[], &cfg, |_| {}).expect("train");
        (out, prepared.vocab, corpus.clone())
    })
}

fn export_bytes(out: &TrainOutcome<f64>, vocab: &mahnn::embeddings::Vocabulary, corpus: &Corpus) -> Vec<u8> {
    let records: Vec<_> = corpus
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| attention_record(&out.model, vocab, i + 1, &e.tokens).expect("record"))
        .collect();
    let mut bytes = Vec::new();
    write_jsonl(&records, &mut bytes).expect("jsonl");
    for r in &records {
        write_csv(r, &mut bytes).expect("csv");
    }
    bytes
}

fn determinism() -> Outcome {
    let (a, vocab_a, corpus) = train_on_keywords(1);
    let (b, vocab_b, _) = train_on_keywords(3);
    let epoch1 = a.history[0].train_loss.to_bits() == b.history[0].train_loss.to_bits();
    let exports = export_bytes(&a, &vocab_a, &corpus) == export_bytes(&b, &vocab_b, &corpus);

    let cfg = small_train_config();
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (first, second) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
    save(first.path(), &a.model, &vocab_a, &cfg, &rng).expect("save");
    let loaded = load::<f64>(first.path()).expect("load");
    save(second.path(), &loaded.model, &loaded.vocab, &cfg, &rng).expect("save again");
    let files = [
        checkpoint::PARAMS_FILE,
        checkpoint::MANIFEST_FILE,
        checkpoint::CONFIG_FILE,
        checkpoint::VOCAB_FILE,
        checkpoint::RNG_FILE,
    ];
    let round_trip = files.iter().all(|f| {
        std::fs::read(first.path().join(f)).expect("read") == std::fs::read(second.path().join(f)).expect("read")
    }) && export_bytes(&a, &vocab_a, &corpus)
        == export_bytes(
            &TrainOutcome {
                model: loaded.model,
                ..a.clone()
            },
            &loaded.vocab,
            &corpus,
        );
    outcome(
        epoch1 && exports && round_trip,
        format!("epoch-1 loss identical across 1/3 threads: {epoch1}, attention exports identical: {exports}, checkpoint round trip identical: {round_trip}"),
    )
}

fn variants() -> Outcome {
    let corpus = keyword_corpus(20, 1);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let manifest = |channels: usize, rv: bool| {
        let cfg = TrainConfig {
            channels,
            rv,
            ..TrainConfig::default()
        };
        let model = prepare_model::<f64>(&cfg, &corpus, &all).expect("prepare").model;
        let m = checkpoint::manifest(&model);
        let layout: Vec<(String, Vec<usize>)> = m.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
        (model.config.variant_name(), layout)
    };
    let built = [manifest(1, false), manifest(3, false), manifest(3, true)];
    let names: Vec<&str> = built.iter().map(|(n, _)| n.as_str()).collect();
    let distinct = built[0].1 != built[1].1 && built[1].1 != built[2].1 && built[0].1 != built[2].1;
    let named = names == ["MahNN-1", "MahNN-3", "MahNN-rv"];
    let sizes: Vec<String> = built.iter().map(|(n, l)| format!("{n}: {} tensors", l.len())).collect();
    outcome(distinct && named, sizes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 gradient check", gradcheck),
        ("2 attention invariants", invariants),
        ("3 vectorized vs scalar", oracle),
        ("4 keyword corpus", keywords),
        ("5 10-fold cross-validation", cross_validation),
        ("6 determinism", determinism),
        ("7 variant manifests", variants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = run();
        println!(
            "{} criterion {name}: {}",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
        failed += usize::from(!result.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

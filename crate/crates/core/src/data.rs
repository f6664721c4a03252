//! Corpus ingestion: tokenization, `label<TAB>text` loading, split plans and
//! converters from the raw distribution formats.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, isolates ASCII punctuation as standalone tokens and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// How the label column is interpreted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSchema {
    /// Labels are `0..c`; `c` is one past the largest label seen unless given.
    Integer { classes: Option<usize> },
    /// Labels are names; the id of a name is its position in the list.
    Names(Vec<String>),
}

impl Default for LabelSchema {
    fn default() -> Self {
        LabelSchema::Integer { classes: None }
    }
}

/// Which file-given partition an example came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub label: usize,
    /// 1-based line number in the source file.
    pub line: usize,
    pub part: Part,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<LabeledExample>,
    pub class_names: Vec<String>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// Appends the examples of `other`, tagged as `part`. Class lists must
    /// agree up to the shorter one; the longer list wins.
    pub fn append(&mut self, other: Corpus, part: Part) -> Result<()> {
        let shared = self.class_names.len().min(other.class_names.len());
        if self.class_names[..shared] != other.class_names[..shared] {
            return Err(Error::Schema {
                line: 0,
                msg: format!("class lists differ: {:?} vs {:?}", self.class_names, other.class_names),
            });
        }
        if other.class_names.len() > self.class_names.len() {
            self.class_names = other.class_names;
        }
        self.examples.extend(other.examples.into_iter().map(|mut e| {
            e.part = part;
            e
        }));
        Ok(())
    }

    pub fn indices_of(&self, part: Part) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.examples[i].part == part).collect()
    }

    /// Longest token count among `indices`.
    pub fn max_length(&self, indices: &[usize]) -> usize {
        indices
            .iter()
            .map(|&i| self.examples[i].tokens.len())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

/// Summary of one load, comparable to a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Number of classes `c`.
    pub classes: usize,
    /// Accepted examples `N`.
    pub examples: usize,
    pub average_length: f64,
    pub max_length: usize,
    pub distinct_tokens: usize,
    pub class_counts: Vec<usize>,
    pub rejected: Vec<RejectedLine>,
    /// Invalid UTF-8 sequences replaced by U+FFFD.
    pub replaced_invalid_utf8: usize,
}

/// Decodes bytes as UTF-8, replacing invalid sequences; returns the text and
/// the number of replacements.
pub fn decode_lossy(bytes: &[u8]) -> (String, usize) {
    let mut out = String::with_capacity(bytes.len());
    let mut replaced = 0;
    for chunk in bytes.utf8_chunks() {
        out.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            out.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    (out, replaced)
}

/// Reads `label<TAB>text` lines. Blank lines are skipped; lines whose text
/// tokenizes to nothing are rejected with a warning and listed in the report.
pub fn load_tsv<R: Read>(mut source: R, schema: &LabelSchema) -> Result<(Corpus, LoadReport)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let (text, replaced) = decode_lossy(&bytes);

    let mut examples = Vec::new();
    let mut rejected = Vec::new();
    let mut max_label = 0usize;
    for (i, raw) in text.split('\n').enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let (label_field, body) = raw.split_once('\t').ok_or_else(|| Error::Parse {
            line,
            msg: "expected `label<TAB>text`".into(),
        })?;
        let label_field = label_field.trim();
        let label = match schema {
            LabelSchema::Integer { classes } => {
                let label: usize = label_field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("label `{label_field}` is not a non-negative integer"),
                })?;
                if let Some(c) = classes {
                    if label >= *c {
                        return Err(Error::Schema {
                            line,
                            msg: format!("label {label} outside [0, {c})"),
                        });
                    }
                }
                label
            }
            LabelSchema::Names(names) => names
                .iter()
                .position(|n| n == label_field)
                .ok_or_else(|| Error::Schema {
                    line,
                    msg: format!("unknown label `{label_field}`"),
                })?,
        };
        let tokens = tokenize(body);
        if tokens.is_empty() {
            log::warn!("line {line}: no tokens after tokenization, skipped");
            rejected.push(RejectedLine {
                line,
                reason: "empty after tokenization".into(),
            });
            continue;
        }
        max_label = max_label.max(label);
        examples.push(LabeledExample {
            tokens,
            label,
            line,
            part: Part::Train,
        });
    }

    let class_names = match schema {
        LabelSchema::Integer { classes } => {
            let c = classes.unwrap_or(if examples.is_empty() { 0 } else { max_label + 1 });
            (0..c).map(|i| i.to_string()).collect()
        }
        LabelSchema::Names(names) => names.clone(),
    };
    let corpus = Corpus { examples, class_names };
    let report = corpus_report(&corpus, rejected, replaced);
    Ok((corpus, report))
}

pub fn corpus_report(corpus: &Corpus, rejected: Vec<RejectedLine>, replaced_invalid_utf8: usize) -> LoadReport {
    let n = corpus.len();
    let total: usize = corpus.examples.iter().map(|e| e.tokens.len()).sum();
    let mut class_counts = vec![0; corpus.classes()];
    let mut distinct = std::collections::HashSet::new();
    for e in &corpus.examples {
        class_counts[e.label] += 1;
        distinct.extend(e.tokens.iter().map(String::as_str));
    }
    LoadReport {
        classes: corpus.classes(),
        examples: n,
        average_length: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        max_length: corpus.examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0),
        distinct_tokens: distinct.len(),
        class_counts,
        rejected,
        replaced_invalid_utf8,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    /// Use the file-given train/dev/test partition as is.
    FixedTest,
    CrossValidation {
        k: usize,
    },
}

/// One train/dev/test assignment of example indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub folds: Vec<Fold>,
}

/// Partitions `0..n` into `k` disjoint folds after a seeded shuffle; the
/// first `n mod k` folds hold one extra index.
pub fn kfold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds the {n} available examples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

pub fn make_splits(corpus: &Corpus, mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    let folds = match mode {
        SplitMode::FixedTest => {
            let fold = Fold {
                train: corpus.indices_of(Part::Train),
                dev: corpus.indices_of(Part::Dev),
                test: corpus.indices_of(Part::Test),
            };
            if fold.train.is_empty() {
                return Err(Error::config("the training partition is empty"));
            }
            vec![fold]
        }
        SplitMode::CrossValidation { k } => {
            let parts = kfold_assignment(corpus.len(), k, seed)?;
            (0..k)
                .map(|t| {
                    let mut train: Vec<usize> = parts
                        .iter()
                        .enumerate()
                        .filter(|&(f, _)| f != t)
                        .flat_map(|(_, p)| p.iter().copied())
                        .collect();
                    train.sort_unstable();
                    let mut test = parts[t].clone();
                    test.sort_unstable();
                    Fold {
                        train,
                        dev: Vec::new(),
                        test,
                    }
                })
                .collect()
        }
    };
    Ok(SplitPlan { mode, folds })
}

/// Moves a seeded `fraction` of `train` (at least one example when
/// `fraction > 0` and two or more remain) into `dev`.
pub fn carve_dev(fold: &mut Fold, fraction: f64, seed: u64) {
    if fraction <= 0.0 || fold.train.len() < 2 {
        return;
    }
    let count = ((fold.train.len() as f64 * fraction).round() as usize).clamp(1, fold.train.len() - 1);
    let mut order = fold.train.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut dev: Vec<usize> = order[..count].to_vec();
    let mut train: Vec<usize> = order[count..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    fold.dev.extend(dev);
    fold.dev.sort_unstable();
    fold.train = train;
}

/// Builds `label<TAB>text` lines from one-sentence-per-line files, one file
/// per class (class id = position in `files`). Returns the TSV text and the
/// number of invalid UTF-8 replacements.
pub fn convert_per_class_files(files: &[&[u8]]) -> (String, usize) {
    let mut out = String::new();
    let mut replaced = 0;
    for (label, bytes) in files.iter().enumerate() {
        let (text, r) = decode_lossy(bytes);
        replaced += r;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            out.push_str(&format!("{label}\t{}\n", line.replace('\t', " ")));
        }
    }
    (out, replaced)
}

/// Converts `label text` lines (label first, space separated) into TSV.
pub fn convert_label_first(bytes: &[u8]) -> Result<(String, usize)> {
    let (text, replaced) = decode_lossy(bytes);
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (label, body) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected `label text`".into(),
        })?;
        out.push_str(&format!("{label}\t{}\n", body.trim().replace('\t', " ")));
    }
    Ok((out, replaced))
}

//! Vocabulary, word2vec text loading, OOV initialization, and the
//! front-padding / tail-truncation rule for fixed-length inputs.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map. Ids are dense in `[0, len)`; `0` is the pad symbol and
/// `1` the unknown-word symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Builds a vocabulary in first-occurrence order over `sentences`.
    pub fn from_sentences<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut v = Vocabulary::new();
        for s in sentences {
            for tok in s.as_ref() {
                v.insert(tok);
            }
        }
        v
    }

    /// Returns the id of `token`, adding it if new.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    /// True when nothing beyond the two special symbols is present.
    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() <= 2
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    /// Id of `token`, or the unknown-word id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One token per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.id_to_token {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in input.lines() {
            tokens.push(line?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Parse {
                line: 1,
                msg: format!("vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"),
            });
        }
        let mut v = Vocabulary::new();
        for (i, t) in tokens.iter().enumerate().skip(2) {
            if t.is_empty() || v.get(t).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("empty or duplicate vocabulary entry {t:?}"),
                });
            }
            v.insert(t);
        }
        Ok(v)
    }
}

/// Pretrained rows attached to a vocabulary; unmatched rows are `None`
/// until [`init_oov`] fills them.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialEmbeddings {
    pub dim: usize,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl PartialEmbeddings {
    pub fn empty(vocab_size: usize, dim: usize) -> Self {
        PartialEmbeddings {
            dim,
            rows: vec![None; vocab_size],
        }
    }

    /// Count of rows carrying a pretrained vector.
    pub fn matched(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    /// Drops pretrained vectors for ids flagged rare so they get a fresh
    /// uniform initialization instead.
    pub fn forget(&mut self, rare: impl IntoIterator<Item = usize>) {
        for id in rare {
            if let Some(r) = self.rows.get_mut(id) {
                *r = None;
            }
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads the word2vec text format: a `"V d"` header followed by `V` lines
/// of `token v1 … vd`. Vectors are kept only for tokens in `vocab`.
pub fn load_word2vec_text<R: BufRead>(source: R, vocab: &Vocabulary, dim: usize) -> Result<PartialEmbeddings> {
    let mut lines = source.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, file_dim) = match fields.as_slice() {
        [v, d] => (
            v.parse::<usize>()
                .map_err(|_| parse_err(1, format!("bad vector count {v:?}")))?,
            d.parse::<usize>()
                .map_err(|_| parse_err(1, format!("bad dimension {d:?}")))?,
        ),
        _ => return Err(parse_err(1, format!("header must be \"V d\", got {header:?}"))),
    };
    if file_dim != dim {
        return Err(Error::config(format!(
            "word2vec dimension {file_dim} does not match configured embedding_dim {dim}"
        )));
    }

    let mut out = PartialEmbeddings::empty(vocab.len(), dim);
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if seen == count {
            return Err(parse_err(
                lineno,
                format!("more than the {count} vectors declared in the header"),
            ));
        }
        seen += 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(lineno, format!("bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(parse_err(
                lineno,
                format!("expected {dim} values for {token:?}, found {}", values.len()),
            ));
        }
        if let Some(id) = vocab.get(token) {
            if !vocab.is_special(id) && out.rows[id].is_none() {
                out.rows[id] = Some(values);
            }
        }
    }
    if seen != count {
        return Err(parse_err(
            seen + 2,
            format!("header declares {count} vectors, found {seen}"),
        ));
    }
    Ok(out)
}

/// Trainable `V × d` lookup matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub matrix: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn vocab_size(&self) -> usize {
        self.matrix.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.matrix.dims2().1
    }
}

/// Fills every unmatched row i.i.d. from `U[-range, range]`, visiting rows
/// in id order so the result is a pure function of the rng state.
pub fn init_oov<T: Real, R: Rng + ?Sized>(partial: &PartialEmbeddings, rng: &mut R, range: f64) -> EmbeddingTable<T> {
    let d = partial.dim;
    let mut data = Vec::with_capacity(partial.rows.len() * d);
    for row in &partial.rows {
        match row {
            Some(v) => data.extend(v.iter().map(|&x| T::lit(x))),
            None => data.extend((0..d).map(|_| T::lit(rng.gen_range(-range..=range)))),
        }
    }
    EmbeddingTable {
        matrix: Tensor::new(vec![partial.rows.len(), d], data).expect("consistent rows"),
        trainable: true,
    }
}

/// Fixed-length id sequence plus its pad mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<usize>,
    /// `true` exactly at pad positions.
    pub pad_mask: Vec<bool>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions holding real tokens.
    pub fn token_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.pad_mask.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i)
    }
}

/// Maps tokens to ids and brings them to exactly `len` positions: short
/// inputs get pad ids prepended, long ones keep their first `len` tokens.
pub fn encode_and_pad<S: AsRef<str>>(tokens: &[S], len: usize, vocab: &Vocabulary) -> Result<EncodedInput> {
    if len == 0 {
        return Err(Error::config("sequence length must be at least 1"));
    }
    if vocab.is_empty() {
        return Err(Error::config("vocabulary has no tokens"));
    }
    let kept = tokens.len().min(len);
    let pads = len - kept;
    let mut ids = vec![vocab.pad_id(); pads];
    ids.extend(tokens[..kept].iter().map(|t| vocab.id(t.as_ref())));
    let mut pad_mask = vec![true; pads];
    pad_mask.extend(std::iter::repeat_n(false, kept));
    Ok(EncodedInput { ids, pad_mask })
}

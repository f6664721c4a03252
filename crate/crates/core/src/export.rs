//! Per-example attention weights as JSON lines and CSV tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embeddings::{encode_and_pad, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{argmax, Mahnn};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    /// 1-based channel number.
    pub channel: usize,
    /// Syntactic weight of each token.
    pub syntactic: Vec<f64>,
    /// Mean semantic weight of each token across hidden dimensions; all
    /// ones when semantic attention is disabled.
    pub semantic: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// 1-based line of the input file.
    pub line: usize,
    /// Tokens as they entered the model, pads omitted.
    pub tokens: Vec<String>,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
    pub channels: Vec<ChannelWeights>,
}

/// Inference-mode attention weights of one tokenized sentence.
pub fn attention_record<T: Real>(
    model: &Mahnn<T>,
    vocab: &Vocabulary,
    line: usize,
    tokens: &[String],
) -> Result<AttentionRecord> {
    if tokens.is_empty() {
        return Err(Error::Contract(format!("line {line} has no tokens")));
    }
    let enc = encode_and_pad(tokens, model.config.seq_len, vocab)?;
    let positions: Vec<usize> = enc.token_positions().collect();
    let kept = &tokens[..positions.len()];
    let probs: Vec<f64> = model
        .predict(&enc.ids, &enc.pad_mask)?
        .into_iter()
        .map(Real::as_f64)
        .collect();
    let weights = model.attention_weights(&enc.ids, &enc.pad_mask)?;
    let channels = weights
        .iter()
        .enumerate()
        .map(|(c, (a, semantic))| {
            let syntactic = positions.iter().map(|&i| a.data()[i].as_f64()).collect();
            let semantic = match semantic {
                Some(s) => {
                    let (_, width) = s.dims2();
                    positions
                        .iter()
                        .map(|&i| {
                            let row = &s.data()[i * width..(i + 1) * width];
                            row.iter().map(|x| x.as_f64()).sum::<f64>() / width as f64
                        })
                        .collect()
                }
                None => vec![1.0; positions.len()],
            };
            ChannelWeights {
                channel: c + 1,
                syntactic,
                semantic,
            }
        })
        .collect();
    Ok(AttentionRecord {
        line,
        tokens: kept.to_vec(),
        predicted: argmax(&probs),
        probabilities: probs,
        channels,
    })
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[AttentionRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `token,syn_1..syn_L,sem_1..sem_L`, one row per token.
pub fn write_csv<W: Write>(record: &AttentionRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["token".to_string()];
    header.extend(record.channels.iter().map(|c| format!("syn_{}", c.channel)));
    header.extend(record.channels.iter().map(|c| format!("sem_{}", c.channel)));
    w.write_record(&header).map_err(csv_error)?;
    for (k, tok) in record.tokens.iter().enumerate() {
        let mut row = vec![tok.clone()];
        row.extend(record.channels.iter().map(|c| c.syntactic[k].to_string()));
        row.extend(record.channels.iter().map(|c| c.semantic[k].to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

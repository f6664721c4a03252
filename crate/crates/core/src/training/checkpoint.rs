//! Checkpoint directories: `config.json`, `vocab.txt`, `params.bin` with its
//! `params.json` manifest, and `rng.json`.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Mahnn, ModelConfig};
use crate::tensor::{Dtype, Real, Tensor};

use super::config::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "params.json";
pub const RNG_FILE: &str = "rng.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub format_version: u32,
    pub variant: String,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
    pub regularized: bool,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format_version: u32,
    pub dtype: Dtype,
    pub byte_len: usize,
    pub tensors: Vec<TensorEntry>,
}

/// ChaCha8 position, enough to resume the exact stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

pub fn manifest<T: Real>(model: &Mahnn<T>) -> ParamManifest {
    let mut offset = 0;
    let tensors = model
        .store
        .iter()
        .map(|(_, p)| {
            let entry = TensorEntry {
                name: p.name.clone(),
                group: p.group.clone(),
                shape: p.value.shape().to_vec(),
                offset,
                regularized: p.regularized,
                trainable: p.trainable,
            };
            offset += p.value.len() * T::DTYPE.size();
            entry
        })
        .collect();
    ParamManifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE,
        byte_len: offset,
        tensors,
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Saves everything needed to rebuild `model`; returns the files written.
pub fn save<T: Real>(
    dir: &Path,
    model: &Mahnn<T>,
    vocab: &Vocabulary,
    train: &TrainConfig,
    rng: &ChaCha8Rng,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let config = CheckpointConfig {
        format_version: FORMAT_VERSION,
        variant: model.config.variant_name(),
        train: train.clone(),
        model: model.config.clone(),
    };
    let man = manifest(model);
    let mut blob = Vec::with_capacity(man.byte_len);
    for (_, p) in model.store.iter() {
        for &x in p.value.data() {
            x.write_le(&mut blob);
        }
    }
    let mut vocab_bytes = Vec::new();
    vocab.write_to(&mut vocab_bytes)?;

    let files = [
        (CONFIG_FILE, serde_json::to_vec_pretty(&config)?),
        (VOCAB_FILE, vocab_bytes),
        (PARAMS_FILE, blob),
        (MANIFEST_FILE, serde_json::to_vec_pretty(&man)?),
        (RNG_FILE, serde_json::to_vec_pretty(&RngState::capture(rng))?),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub config: CheckpointConfig,
    pub vocab: Vocabulary,
    pub model: Mahnn<T>,
    pub rng: RngState,
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Parameter precision recorded in `dir`.
pub fn stored_dtype(dir: &Path) -> Result<Dtype> {
    let man: ParamManifest = read_json(&dir.join(MANIFEST_FILE))?;
    Ok(man.dtype)
}

/// Rebuilds the model stored in `dir`. The stored precision must match `T`.
pub fn load<T: Real>(dir: &Path) -> Result<Loaded<T>> {
    let config: CheckpointConfig = read_json(&dir.join(CONFIG_FILE))?;
    if config.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            config.format_version
        )));
    }
    let man: ParamManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if man.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {:?} parameters, requested {:?}",
            man.dtype,
            T::DTYPE
        )));
    }
    let vocab_file =
        fs::File::open(dir.join(VOCAB_FILE)).map_err(|e| Error::Checkpoint(format!("{VOCAB_FILE}: {e}")))?;
    let vocab = Vocabulary::read_from(BufReader::new(vocab_file))?;
    if vocab.len() != config.model.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            config.model.vocab_size
        )));
    }
    let blob = fs::read(dir.join(PARAMS_FILE)).map_err(|e| Error::Checkpoint(format!("{PARAMS_FILE}: {e}")))?;
    if blob.len() != man.byte_len {
        return Err(Error::Checkpoint(format!(
            "{PARAMS_FILE} has {} bytes, manifest declares {}",
            blob.len(),
            man.byte_len
        )));
    }
    let rng: RngState = read_json(&dir.join(RNG_FILE))?;

    // Parameters are overwritten below; the init draw only fixes the layout.
    let mut model: Mahnn<T> = Mahnn::new(config.model.clone(), None, &mut ChaCha8Rng::seed_from_u64(0))?;
    if man.tensors.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            man.tensors.len(),
            model.store.len()
        )));
    }
    let size = T::DTYPE.size();
    for entry in &man.tensors {
        let id = model
            .store
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
        let expected = model.store.get(id).shape().to_vec();
        if entry.shape != expected {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has shape {:?}, model expects {:?}",
                entry.name, entry.shape, expected
            )));
        }
        let len: usize = entry.shape.iter().product();
        let end = entry.offset + len * size;
        let bytes = blob.get(entry.offset..end).ok_or_else(|| {
            Error::Checkpoint(format!("parameter `{}` runs past the end of {PARAMS_FILE}", entry.name))
        })?;
        let data = bytes.chunks_exact(size).map(T::read_le).collect();
        model.store.set(id, Tensor::new(entry.shape.clone(), data)?)?;
        model.store.set_trainable(id, entry.trainable);
    }
    Ok(Loaded {
        config,
        vocab,
        model,
        rng,
    })
}

//! Checkpoint files.
//!
//! Layout: the ASCII magic `AFTRCKPT1\n`, one line of JSON header, then every
//! parameter as little-endian `f32` in manifest order. The header carries the
//! encoder config, the vocabulary with its hash, and a manifest of
//! `(name, rows, cols, offset)` where `offset` is the byte offset of the tensor
//! from the start of the blob section.
//!
//! Parameters are stored as `f32`, so a loaded model differs from the saved
//! one by the `f32` rounding of every weight.

use std::path::Path;

use after_core::data::Vocab;
use after_core::model::{init_model, EncoderConfig, EncoderModel};
use serde::{Deserialize, Serialize};

use crate::fsio::atomic_write;
use crate::vocab_io::vocab_hash;
use crate::{Error, Result};

pub const MAGIC: &[u8] = b"AFTRCKPT1\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: EncoderConfig,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub vocab: Vocab,
}

pub fn encode_checkpoint(model: &EncoderModel, vocab: &Vocab) -> Result<Vec<u8>> {
    if vocab.len() != model.config.vocab_size {
        return Err(Error::usage(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let mut params = Vec::new();
    let mut offset = 0;
    for (name, _, t) in model.params() {
        params.push(ManifestEntry { name: name.to_string(), rows: t.rows(), cols: t.cols(), offset });
        offset += 4 * t.len();
    }
    let header = Header {
        config: model.config.clone(),
        vocab_hash: vocab_hash(vocab),
        vocab: vocab.tokens().to_vec(),
        params,
    };
    let mut out = MAGIC.to_vec();
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    out.reserve(offset);
    for (_, _, t) in model.params() {
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &EncoderModel, vocab: &Vocab) -> Result<()> {
    atomic_write(path, &encode_checkpoint(model, vocab)?)
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: String| Error::invalid(path, msg);
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("not a checkpoint (bad magic)".into()))?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&rest[..newline]).map_err(|e| bad(format!("bad header: {e}")))?;
    let blob = &rest[newline + 1..];

    let vocab = Vocab::from_tokens(header.vocab.clone()).map_err(|e| bad(e.to_string()))?;
    if vocab_hash(&vocab) != header.vocab_hash {
        return Err(bad("vocabulary hash does not match the stored vocabulary".into()));
    }
    let mut model = init_model(&header.config).map_err(|e| bad(e.to_string()))?;
    if vocab.len() != model.config.vocab_size {
        return Err(bad(format!("vocabulary size {} != config vocab_size {}", vocab.len(), model.config.vocab_size)));
    }
    let mut params = model.params_mut();
    if params.len() != header.params.len() {
        return Err(bad(format!("expected {} tensors, header lists {}", params.len(), header.params.len())));
    }
    for ((name, _, tensor), entry) in params.iter_mut().zip(&header.params) {
        if entry.name != *name || (entry.rows, entry.cols) != tensor.shape() {
            return Err(bad(format!(
                "manifest entry {}:{}x{} does not match parameter {name}:{:?}",
                entry.name,
                entry.rows,
                entry.cols,
                tensor.shape()
            )));
        }
        let end = entry.offset + 4 * tensor.len();
        let raw = blob
            .get(entry.offset..end)
            .ok_or_else(|| bad(format!("blob too short for {name}")))?;
        for (x, b) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *x = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
    }
    let expected: usize = header.params.iter().map(|e| 4 * e.rows * e.cols).sum();
    if blob.len() != expected {
        return Err(bad(format!("blob has {} bytes, manifest needs {expected}", blob.len())));
    }
    Ok(Checkpoint { model, vocab })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}

//! Vocabulary files: one token per line, line number = id, specials first.

use std::path::Path;

use after_core::data::Vocab;

use crate::fsio::{atomic_write, read_to_string, sha256_hex};
use crate::{Error, Result};

pub fn vocab_bytes(vocab: &Vocab) -> Vec<u8> {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    out.into_bytes()
}

/// SHA-256 of the vocabulary file contents.
pub fn vocab_hash(vocab: &Vocab) -> String {
    sha256_hex(&vocab_bytes(vocab))
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    atomic_write(path, &vocab_bytes(vocab))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let tokens: Vec<String> = read_to_string(path)?.lines().map(str::to_string).collect();
    Vocab::from_tokens(tokens).map_err(|e| Error::invalid(path, e.to_string()))
}

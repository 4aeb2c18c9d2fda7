//! The synthetic benchmark on disk.

use std::path::{Path, PathBuf};

use after_core::data::{gen_synthetic, LabeledText, SynthSpec};

use crate::fsio::atomic_write;
use crate::jsonl::{write_records, Record};
use crate::{Error, Result};

pub const MAIN_TRAIN: &str = "main_train.jsonl";
pub const MAIN_VAL: &str = "main_val.jsonl";
pub const MAIN_TEST: &str = "main_test.jsonl";
pub const AUX: &str = "aux.jsonl";
pub const PRETRAIN: &str = "pretrain.txt";

fn labeled(items: &[LabeledText]) -> Vec<Record> {
    items.iter().map(|t| Record { text: t.text.clone(), label: Some(t.label) }).collect()
}

/// True if `dir` exists and has at least one entry.
pub fn is_non_empty_dir(dir: &Path) -> Result<bool> {
    match std::fs::read_dir(dir) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(dir, e)),
    }
}

/// Generates the benchmark and writes its five data files into `dir`,
/// returning their paths in the order train, val, test, aux, pretrain.
pub fn write_synthetic(dir: &Path, spec: &SynthSpec) -> Result<Vec<PathBuf>> {
    let corpus = gen_synthetic(spec)?;
    let paths: Vec<PathBuf> = [MAIN_TRAIN, MAIN_VAL, MAIN_TEST, AUX, PRETRAIN]
        .iter()
        .map(|n| dir.join(n))
        .collect();
    write_records(&paths[0], &labeled(&corpus.main_train))?;
    write_records(&paths[1], &labeled(&corpus.main_val))?;
    write_records(&paths[2], &labeled(&corpus.main_test))?;
    let aux: Vec<Record> = corpus.aux.iter().map(|t| Record { text: t.clone(), label: None }).collect();
    write_records(&paths[3], &aux)?;
    let mut pretrain = corpus.pretrain.join("\n");
    pretrain.push('\n');
    atomic_write(&paths[4], pretrain.as_bytes())?;
    Ok(paths)
}

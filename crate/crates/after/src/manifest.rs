use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fsio::{sha256_file, write_json};
use crate::Result;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Everything needed to rerun a command: its arguments, the effective config,
/// the seeds, the tool version and the SHA-256 of every input file. Written
/// once before work starts and again, with `finished_unix`, when it ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: Value, seeds: Vec<u64>, inputs: &[&Path]) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(Self {
            command,
            version: VERSION.to_string(),
            config,
            seeds,
            inputs: hashes,
            started_unix: now(),
            finished_unix: None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        self.write(path)
    }
}

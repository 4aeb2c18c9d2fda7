//! Std companion of `after-core`: dataset and vocabulary files, checkpoints,
//! run manifests, the parallel sweep runner, report tables and the `after`
//! command line.

pub mod checkpoint;
pub mod cli;
mod error;
pub mod experiment;
pub mod fsio;
pub mod jsonl;
pub mod manifest;
pub mod report;
pub mod synth_io;
pub mod vocab_io;

pub use error::{Error, Result};

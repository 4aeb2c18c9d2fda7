//! Loading Main/Auxiliary data for a checkpoint and running fine-tuning jobs
//! on a worker pool.

use std::path::{Path, PathBuf};

use after_core::data::{Dataset, Split, Vocab};
use after_core::model::EncoderModel;
use after_core::training::{
    assemble_sweep, finetune, run_cell, sweep_cells, FinetuneOutput, MainSplits, Mode, SweepResult,
    TrainConfig,
};
use rayon::prelude::*;

use crate::jsonl::{load_jsonl, Kind};
use crate::synth_io::{MAIN_TEST, MAIN_TRAIN, MAIN_VAL};
use crate::{Error, Result};

/// The files of a Main directory. The test split is optional.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MainFiles {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: Option<PathBuf>,
}

impl MainFiles {
    /// Looks for `main_train.jsonl`, `main_val.jsonl` and optionally
    /// `main_test.jsonl` in `dir`.
    pub fn in_dir(dir: &Path) -> Result<Self> {
        let train = dir.join(MAIN_TRAIN);
        let validation = dir.join(MAIN_VAL);
        for p in [&train, &validation] {
            if !p.is_file() {
                return Err(Error::usage(format!("missing Main split {}", p.display())));
            }
        }
        let test = Some(dir.join(MAIN_TEST)).filter(|p| p.is_file());
        Ok(Self { train, validation, test })
    }

    pub fn paths(&self) -> Vec<&Path> {
        let mut out = vec![self.train.as_path(), self.validation.as_path()];
        out.extend(self.test.as_deref());
        out
    }
}

pub struct MainData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Option<Dataset>,
}

impl MainData {
    pub fn load(files: &MainFiles, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let load = |p: &Path, split| load_jsonl(p, Kind::Main, vocab, max_len, split);
        let data = Self {
            train: load(&files.train, Split::Train)?,
            validation: load(&files.validation, Split::Validation)?,
            test: files.test.as_deref().map(|p| load(p, Split::Test)).transpose()?,
        };
        for (d, p) in [(&data.train, &files.train), (&data.validation, &files.validation)] {
            if d.is_empty() {
                return Err(Error::invalid(p, "no examples"));
            }
        }
        Ok(data)
    }

    pub fn splits(&self) -> MainSplits<'_> {
        MainSplits { train: &self.train, validation: &self.validation, test: self.test.as_ref() }
    }
}

/// Worker count: the explicit value, else the available cores.
pub fn resolve_jobs(jobs: Option<usize>) -> usize {
    jobs.filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::usage(format!("cannot start {jobs} workers: {e}")))
}

/// One fine-tuning run per seed of `config.seeds`, in seed order.
pub fn finetune_seeds(
    pretrained: &EncoderModel,
    main: &MainData,
    aux: Option<&Dataset>,
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<FinetuneOutput>> {
    let runs: Vec<_> = pool(jobs)?.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| finetune(pretrained, main.splits(), aux, config, seed))
            .collect()
    });
    Ok(runs.into_iter().collect::<after_core::Result<_>>()?)
}

/// λ × seed sweep on `jobs` workers. Cell failures are recorded in the result;
/// the outcome does not depend on `jobs`.
pub fn parallel_sweep(
    pretrained: &EncoderModel,
    main: &MainData,
    aux: &Dataset,
    config: &TrainConfig,
    jobs: usize,
) -> Result<SweepResult> {
    config.validate()?;
    if config.mode == Mode::Sft {
        return Err(Error::usage("a lambda sweep needs --mode after or multitask"));
    }
    if config.seeds.is_empty() {
        return Err(Error::usage("no seeds given"));
    }
    let cells = sweep_cells(config);
    let outcomes = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&cell| run_cell(pretrained, main.splits(), aux, config, cell))
            .collect()
    });
    Ok(assemble_sweep(config, outcomes)?)
}

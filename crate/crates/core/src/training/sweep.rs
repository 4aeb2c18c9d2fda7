use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{finetune, MainSplits, Mode, RunResult, TrainConfig};
use crate::data::Dataset;
use crate::error::config_err;
use crate::math::sqrt;
use crate::metrics::{Metric, Scores};
use crate::model::EncoderModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation, 0 for a single value.
    pub std: f64,
}

/// Arithmetic mean and sample (n − 1) standard deviation.
pub fn aggregate(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Empty("values to aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    };
    Ok(MeanStd { mean, std })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub mcc: MeanStd,
}

impl ScoreStats {
    fn from_scores(scores: &[Scores]) -> Result<Self> {
        let col = |f: fn(&Scores) -> f64| aggregate(&scores.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            accuracy: col(|s| s.accuracy)?,
            f1: col(|s| s.f1)?,
            mcc: col(|s| s.mcc)?,
        })
    }

    pub fn get(&self, metric: Metric) -> MeanStd {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
            Metric::Mcc => self.mcc,
        }
    }
}

/// Mean ± std over runs of the selected snapshots' validation and test scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub val_loss: MeanStd,
    pub val: ScoreStats,
    /// Present when every run has test scores.
    pub test: Option<ScoreStats>,
}

pub fn aggregate_runs(results: &[RunResult]) -> Result<RunAggregate> {
    if results.is_empty() {
        return Err(Error::Empty("run results"));
    }
    let val: Vec<Scores> = results.iter().map(|r| r.selected_val).collect();
    let test: Option<Vec<Scores>> = results.iter().map(|r| r.test).collect();
    Ok(RunAggregate {
        runs: results.len(),
        val_loss: aggregate(&results.iter().map(|r| r.selected_val_loss).collect::<Vec<_>>())?,
        val: ScoreStats::from_scores(&val)?,
        test: test.map(|t| ScoreStats::from_scores(&t)).transpose()?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub seed: u64,
}

/// The λ × seed grid in λ-major order.
pub fn sweep_cells(config: &TrainConfig) -> Vec<SweepCell> {
    config
        .lambda_grid
        .iter()
        .flat_map(|&lambda| config.seeds.iter().map(move |&seed| SweepCell { lambda, seed }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub lambda: f64,
    pub seed: u64,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

/// Runs one cell; a failure is captured in the outcome instead of returned.
pub fn run_cell(
    pretrained: &EncoderModel,
    main: MainSplits<'_>,
    aux: &Dataset,
    config: &TrainConfig,
    cell: SweepCell,
) -> CellOutcome {
    let cfg = TrainConfig { lambda: cell.lambda, ..config.clone() };
    match finetune(pretrained, main, Some(aux), &cfg, cell.seed) {
        Ok(out) => CellOutcome { lambda: cell.lambda, seed: cell.seed, result: Some(out.result), error: None },
        Err(e) => CellOutcome {
            lambda: cell.lambda,
            seed: cell.seed,
            result: None,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub failed: usize,
    /// `None` when every seed failed.
    pub aggregate: Option<RunAggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: Mode,
    pub selection_metric: Metric,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellOutcome>,
    pub per_lambda: Vec<LambdaSummary>,
    /// Highest mean validation selection metric; the earlier grid value wins
    /// ties. `None` if every cell failed.
    pub best_lambda: Option<f64>,
}

/// Builds the sweep summary from finished cells, whatever order they finished in.
pub fn assemble_sweep(config: &TrainConfig, mut outcomes: Vec<CellOutcome>) -> Result<SweepResult> {
    let expected = sweep_cells(config);
    let rank = |o: &CellOutcome| {
        expected
            .iter()
            .position(|c| c.lambda == o.lambda && c.seed == o.seed)
            .unwrap_or(usize::MAX)
    };
    outcomes.sort_by_key(rank);
    if outcomes.len() != expected.len() || outcomes.iter().any(|o| rank(o) == usize::MAX) {
        return Err(config_err("sweep outcomes do not match the configured grid"));
    }
    let mut per_lambda = Vec::with_capacity(config.lambda_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &config.lambda_grid {
        let cells: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.lambda == lambda).collect();
        let ok: Vec<RunResult> = cells.iter().filter_map(|o| o.result.clone()).collect();
        let aggregate = if ok.is_empty() { None } else { Some(aggregate_runs(&ok)?) };
        if let Some(a) = &aggregate {
            let score = a.val.get(config.selection_metric).mean;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((lambda, score));
            }
        }
        per_lambda.push(LambdaSummary { lambda, failed: cells.len() - ok.len(), aggregate });
    }
    Ok(SweepResult {
        mode: config.mode,
        selection_metric: config.selection_metric,
        grid: config.lambda_grid.clone(),
        seeds: config.seeds.clone(),
        cells: outcomes,
        per_lambda,
        best_lambda: best.map(|(l, _)| l),
    })
}

/// Serial λ sweep. `config.mode` must be AFTER or MULTITASK.
pub fn lambda_sweep(
    pretrained: &EncoderModel,
    main: MainSplits<'_>,
    aux: &Dataset,
    config: &TrainConfig,
) -> Result<SweepResult> {
    config.validate()?;
    if config.mode == Mode::Sft {
        return Err(config_err("a lambda sweep needs AFTER or MULTITASK mode"));
    }
    if config.seeds.is_empty() {
        return Err(config_err("no seeds given"));
    }
    let outcomes = sweep_cells(config)
        .into_iter()
        .map(|cell| run_cell(pretrained, main, aux, config, cell))
        .collect();
    assemble_sweep(config, outcomes)
}

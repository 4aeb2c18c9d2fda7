//! Optimizer, learning-rate schedule, MLM pretraining, fine-tuning with
//! validation-loss model selection, and λ sweeps.

mod finetune;
mod pretrain;
mod sweep;

pub use finetune::{
    evaluate, finetune, train_step, EvalRecord, Evaluation, FinetuneOutput, MainSplits, Mode,
    Objective, RunResult, StepLosses, TrainConfig,
};
pub use pretrain::{pretrain_mlm, PretrainConfig};
pub use sweep::{
    aggregate, aggregate_runs, assemble_sweep, lambda_sweep, run_cell, sweep_cells, CellOutcome,
    LambdaSummary, MeanStd, RunAggregate, ScoreStats, SweepCell, SweepResult,
};

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::math::{ceil, powi, sqrt};
use crate::model::{EncoderModel, ParamKind};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(config_err("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err("Adam eps must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("weight decay must be >= 0"));
        }
        Ok(())
    }
}

/// First and second moments per parameter, plus the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Tensor::zeros(r, c), Tensor::zeros(r, c)))
            .unzip();
        Self { step: 0, m, v }
    }

    pub fn for_model(model: &EncoderModel) -> Self {
        Self::new(model.params().iter().map(|(_, _, t)| t.shape()))
    }

    /// Updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Weight decay is decoupled (`p -= lr·wd·p`) and only hits
/// [`ParamKind::Weight`] tensors. Parameters whose gradient is `None` were not
/// part of the objective and are left untouched.
pub fn adamw_step(
    params: &mut [(&str, ParamKind, &mut Tensor)],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr_t: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch(params.len(), grads.len()));
    }
    if !(lr_t >= 0.0) {
        return Err(config_err(alloc::format!("learning rate must be >= 0, got {lr_t}")));
    }
    for (((_, _, p), g), m) in params.iter().zip(grads).zip(&state.m) {
        let ok = m.shape() == p.shape() && g.as_ref().is_none_or(|g| g.shape() == p.shape());
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                left: p.shape(),
                right: g.as_ref().map_or(m.shape(), Tensor::shape),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - powi(config.beta1, t);
    let bc2 = 1.0 - powi(config.beta2, t);
    let (b1, b2) = (config.beta1, config.beta2);
    let decay = lr_t * config.weight_decay;
    for (i, (_, kind, p)) in params.iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let decays = kind.decays();
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            if decays {
                *x -= decay * *x;
            }
            *x -= lr_t * m_hat / (sqrt(v_hat) + config.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `lr_peak` over the first
/// `⌈warmup_proportion · total_steps⌉` steps, then linear decay to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_proportion: f64, lr_peak: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::IndexOutOfRange {
            what: "schedule step",
            index: step,
            limit: total_steps + 1,
        });
    }
    if !(0.0..=1.0).contains(&warmup_proportion) {
        return Err(config_err(alloc::format!(
            "warmup proportion {warmup_proportion} outside [0, 1]"
        )));
    }
    let warmup = ceil(warmup_proportion * total_steps as f64) as usize;
    if step < warmup {
        return Ok(lr_peak * step as f64 / warmup as f64);
    }
    if total_steps == warmup {
        return Ok(lr_peak);
    }
    Ok(lr_peak * (total_steps - step) as f64 / (total_steps - warmup) as f64)
}


#[cfg(test)]
mod run_tests;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{adamw_step, lr_at, AdamConfig, AdamState};
use crate::data::{BalancedBatcher, Batch, Dataset, Domain, Example};
use crate::error::config_err;
use crate::math::ceil;
use crate::metrics::{Metric, Scores};
use crate::model::{DomainPath, EncoderModel, Forward};
use crate::rng::{stream, sub_rng, RunRng};
use crate::{Error, Result};

/// Rows per forward pass during evaluation.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Task loss only, no auxiliary data.
    #[default]
    Sft,
    /// Domain head behind a gradient reversal.
    After,
    /// Domain head without reversal; the encoder also learns to separate domains.
    Multitask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// λ for AFTER, the positive domain-loss weight for MULTITASK, ignored for SFT.
    pub lambda: f64,
    pub lr_peak: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_proportion: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub evals_per_epoch: usize,
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    /// Metric used to pick the best λ of a sweep.
    pub selection_metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sft,
            lambda: 0.1,
            lr_peak: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
            epochs: 4,
            batch_size: 28,
            evals_per_epoch: 5,
            seeds: alloc::vec![1, 2, 3, 4, 5],
            lambda_grid: alloc::vec![0.1, 0.01, 0.001, 0.0001],
            selection_metric: Metric::Accuracy,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.epochs == 0 || self.evals_per_epoch == 0 {
            return Err(config_err("epochs and evals_per_epoch must be >= 1"));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(config_err(alloc::format!(
                "batch_size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(config_err("lambda_grid is empty"));
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(config_err("lambda_grid values must be finite and > 0"));
        }
        if !(self.lr_peak >= 0.0) || !(0.0..=1.0).contains(&self.warmup_proportion) {
            return Err(config_err("lr_peak must be >= 0 and warmup_proportion in [0, 1]"));
        }
        if self.mode != Mode::Sft && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(config_err(alloc::format!(
                "{:?} mode needs lambda > 0, got {}",
                self.mode,
                self.lambda
            )));
        }
        Ok(())
    }

    /// The per-step objective of this configuration.
    pub fn objective(&self) -> Objective {
        match self.mode {
            Mode::Sft => Objective::Sft,
            Mode::After => Objective::Regularized { weight: self.lambda, path: DomainPath::Adversarial },
            Mode::Multitask => Objective::Regularized { weight: self.lambda, path: DomainPath::Plain },
        }
    }
}

/// Loss optimized by one [`train_step`]. `Regularized` applies no sign checks,
/// which lets tests run the degenerate zero-weight case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Sft,
    Regularized { weight: f64, path: DomainPath },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub main: f64,
    pub domain: Option<f64>,
}

/// Forward, backward and one AdamW update on `batch`. A non-finite loss aborts
/// before the parameters are touched.
pub fn train_step(
    model: &mut EncoderModel,
    state: &mut AdamState,
    adam: &AdamConfig,
    batch: &Batch,
    objective: Objective,
    lr: f64,
    dropout: Option<&mut RunRng>,
) -> Result<StepLosses> {
    let (losses, grads) = {
        let mut fw = Forward::new(model);
        let (total, losses) = match objective {
            Objective::Sft => {
                let l = fw.sft_loss(batch, dropout)?;
                (l, StepLosses { main: fw.scalar(l)?, domain: None })
            }
            Objective::Regularized { weight, path } => {
                let l = fw.regularized_losses(batch, weight, path, dropout)?;
                (l.total, StepLosses { main: l.main_value, domain: Some(l.domain_value) })
            }
        };
        if !losses.main.is_finite() || losses.domain.is_some_and(|d| !d.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: state.step() as usize,
                main: losses.main,
                domain: losses.domain,
            });
        }
        fw.backward(total)?;
        (losses, fw.param_grads())
    };
    adamw_step(&mut model.params_mut(), &grads, state, lr, adam)?;
    Ok(losses)
}

/// Loss, scores and predictions of a model on a labeled dataset, in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub scores: Scores,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &EncoderModel, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    if let Some(i) = dataset.examples.iter().position(|e| e.task_label.is_none()) {
        return Err(Error::Input(alloc::format!("evaluation example {i} has no task label")));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut golds = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples.chunks(EVAL_BATCH) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = Batch::from_examples(&refs);
        let golds_chunk: Vec<usize> = chunk.iter().map(|e| e.task_label.unwrap_or(0)).collect();
        let mut fw = Forward::frozen(model);
        let repr = fw.encode(&batch, None)?;
        let logits = fw.task_logits(&repr)?;
        let all = alloc::vec![true; chunk.len()];
        let loss = fw.graph.cross_entropy_logits(logits, &golds_chunk, &all)?;
        loss_sum += fw.scalar(loss)? * chunk.len() as f64;
        let lv = fw.value(logits);
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let mut best = 0;
            for (c, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = c;
                }
            }
            predictions.push(best);
        }
        golds.extend(golds_chunk);
    }
    Ok(Evaluation {
        loss: loss_sum / dataset.len() as f64,
        scores: Scores::compute(&predictions, &golds)?,
        predictions,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct MainSplits<'a> {
    pub train: &'a Dataset,
    pub validation: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

/// One in-training evaluation. Training losses are means over the steps since
/// the previous evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_main_loss: f64,
    pub train_domain_loss: Option<f64>,
    pub val_loss: f64,
    pub val: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub mode: Mode,
    /// `None` for SFT.
    pub lambda: Option<f64>,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub evals: Vec<EvalRecord>,
    pub selected_step: usize,
    pub selected_val_loss: f64,
    pub selected_val: Scores,
    pub test_loss: Option<f64>,
    pub test: Option<Scores>,
}

pub struct FinetuneOutput {
    pub result: RunResult,
    /// Parameters at the selected evaluation point.
    pub best: EncoderModel,
}

fn check_main(d: &Dataset, what: &'static str) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Empty(what));
    }
    if d.domain != Domain::Main {
        return Err(Error::Input(alloc::format!("{what} must be a Main dataset")));
    }
    Ok(())
}

/// Fine-tunes a copy of `pretrained` with fresh task and domain heads.
///
/// Within every epoch the validation split is evaluated at steps
/// `⌈k·steps_per_epoch / evals_per_epoch⌉`, k = 1..evals_per_epoch; the
/// snapshot with the lowest validation loss (earliest on ties) is kept and
/// scored on the test split.
pub fn finetune(
    pretrained: &EncoderModel,
    main: MainSplits<'_>,
    aux: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<FinetuneOutput> {
    config.validate()?;
    check_main(main.train, "main train split")?;
    check_main(main.validation, "main validation split")?;
    if let Some(test) = main.test {
        check_main(test, "main test split")?;
    }
    match (config.mode, aux) {
        (Mode::Sft, Some(_)) => return Err(config_err("SFT does not use auxiliary data")),
        (Mode::After | Mode::Multitask, None) => {
            return Err(config_err(alloc::format!("{:?} mode needs auxiliary data", config.mode)))
        }
        (_, Some(a)) if a.domain != Domain::Auxiliary => {
            return Err(Error::Input("auxiliary dataset must have the Auxiliary domain".into()))
        }
        _ => {}
    }

    let mut model = pretrained.clone();
    let n_classes = main.train.n_classes().max(main.validation.n_classes());
    model.reinit_heads(n_classes, seed)?;
    // SFT batches are all Main rows, mixed batches split the size 1:1.
    let mut batcher = BalancedBatcher::new(main.train, aux, config.batch_size, seed)?;
    let spe = batcher.batches_per_epoch();
    let total = spe * config.epochs;
    let eval_at: Vec<usize> = (1..=config.evals_per_epoch)
        .map(|k| ceil((k * spe) as f64 / config.evals_per_epoch as f64) as usize)
        .collect();

    let adam = config.adam();
    let objective = config.objective();
    let mut state = AdamState::for_model(&model);
    let mut dropout_rng = sub_rng(seed, stream::DROPOUT);
    let mut evals = Vec::with_capacity(config.epochs * config.evals_per_epoch);
    let mut best: Option<(usize, Evaluation, EncoderModel)> = None;
    let (mut main_sum, mut dom_sum, mut interval) = (0.0, 0.0, 0usize);

    for epoch in 0..config.epochs {
        let plans = batcher.next_epoch();
        let mut next_eval = 0;
        for (i, plan) in plans.iter().enumerate() {
            let step = epoch * spe + i;
            let batch = batcher.materialize(plan);
            let lr = lr_at(step + 1, total, config.warmup_proportion, config.lr_peak)?;
            let l = train_step(&mut model, &mut state, &adam, &batch, objective, lr, Some(&mut dropout_rng))?;
            main_sum += l.main;
            dom_sum += l.domain.unwrap_or(0.0);
            interval += 1;
            while next_eval < eval_at.len() && eval_at[next_eval] == i + 1 {
                let ev = evaluate(&model, main.validation)?;
                let done = step + 1;
                let n = interval.max(1) as f64;
                evals.push(EvalRecord {
                    step: done,
                    epoch,
                    train_main_loss: main_sum / n,
                    train_domain_loss: (config.mode != Mode::Sft).then_some(dom_sum / n),
                    val_loss: ev.loss,
                    val: ev.scores,
                });
                (main_sum, dom_sum, interval) = (0.0, 0.0, 0);
                if best.as_ref().is_none_or(|(_, b, _)| ev.loss < b.loss) {
                    best = Some((done, ev, model.clone()));
                }
                next_eval += 1;
            }
        }
    }

    let (selected_step, sel, best_model) = best.expect("at least one evaluation point");
    let test = main.test.map(|t| evaluate(&best_model, t)).transpose()?;
    Ok(FinetuneOutput {
        result: RunResult {
            seed,
            mode: config.mode,
            lambda: (config.mode != Mode::Sft).then_some(config.lambda),
            steps_per_epoch: spe,
            total_steps: total,
            evals,
            selected_step,
            selected_val_loss: sel.loss,
            selected_val: sel.scores,
            test_loss: test.as_ref().map(|t| t.loss),
            test: test.map(|t| t.scores),
        },
        best: best_model,
    })
}

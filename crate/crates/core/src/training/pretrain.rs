use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adamw_step, lr_at, AdamConfig, AdamState};
use crate::data::{mlm_mask, special, MaskConfig, MaskedBatch};
use crate::error::config_err;
use crate::model::{EncoderModel, Forward};
use crate::rng::{stream, sub_rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_proportion: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr_peak: 1e-3,
            warmup_proportion: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            mask_prob: 0.15,
            seed: 0,
        }
    }
}

impl PretrainConfig {
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
        if self.steps == 0 || self.batch_size == 0 {
            return Err(config_err("pretraining needs steps > 0 and batch_size > 0"));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(config_err(alloc::format!("mask_prob {} outside (0, 1]", self.mask_prob)));
        }
        if !(self.lr_peak >= 0.0) {
            return Err(config_err("lr_peak must be >= 0"));
        }
        Ok(())
    }
}

/// Trains `model` on the masked-LM objective over `corpus` (encoded sequences
/// starting with `[CLS]`, already truncated to the model's `max_len`). Returns
/// the training loss of every step.
///
/// Sequences are visited in shuffled passes; sequences without a maskable
/// token are skipped.
pub fn pretrain_mlm(
    model: &mut EncoderModel,
    corpus: &[Vec<usize>],
    config: &PretrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let vocab = model.config.vocab_size;
    for (i, seq) in corpus.iter().enumerate() {
        if let Some(&id) = seq.iter().find(|&&id| id >= vocab) {
            return Err(Error::Input(alloc::format!(
                "corpus line {i} has token id {id} outside the model vocabulary of {vocab}"
            )));
        }
    }
    let usable: Vec<usize> = (0..corpus.len())
        .filter(|&i| {
            corpus[i].first() == Some(&special::CLS)
                && corpus[i].iter().any(|&id| id >= special::COUNT)
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }

    let adam = config.adam();
    let mask_cfg = MaskConfig { prob: config.mask_prob, force_one: true };
    let mut order_rng = sub_rng(config.seed, stream::CORPUS_ORDER);
    let mut mask_rng = sub_rng(config.seed, stream::MLM_MASK);
    let mut dropout_rng = sub_rng(config.seed, stream::DROPOUT);
    let mut state = AdamState::for_model(model);
    let mut order = usable.clone();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut masked = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            masked.push(mlm_mask(&corpus[order[cursor]], vocab, mask_cfg, &mut mask_rng)?);
            cursor += 1;
        }
        let mb = MaskedBatch::new(&masked);

        let grads = {
            let mut fw = Forward::new(model);
            let loss = fw.mlm_loss(&mb.batch, &mb.targets, &mb.selected, Some(&mut dropout_rng))?;
            let value = fw.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, main: value, domain: None });
            }
            losses.push(value);
            fw.backward(loss)?;
            fw.param_grads()
        };
        let lr = lr_at(step + 1, config.steps, config.warmup_proportion, config.lr_peak)?;
        adamw_step(&mut model.params_mut(), &grads, &mut state, lr, &adam)?;
    }
    Ok(losses)
}

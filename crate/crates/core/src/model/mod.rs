//! The encoder: token + position embeddings, one pre-norm self-attention block,
//! `[CLS]` pooling and three linear heads (task, domain, masked LM).

mod forward;

pub use forward::{DomainPath, Forward, Losses, SequenceRepr};

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::special;
use crate::error::config_err;
use crate::rng::{standard_normal, stream, sub_rng};
use crate::tensor::Tensor;
use crate::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub n_task_classes: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            max_len: 128,
            dropout_p: 0.1,
            n_task_classes: 2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= special::COUNT {
            return Err(config_err(format!(
                "vocab_size must exceed the {} special tokens",
                special::COUNT
            )));
        }
        if self.d_model < 2 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(config_err(format!(
                "d_model {} must be >= 2 and divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(config_err("d_ff must be positive"));
        }
        if self.max_len < 2 {
            return Err(config_err("max_len must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if self.n_task_classes < 2 {
            return Err(config_err("n_task_classes must be >= 2"));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l, c) = (
            self.vocab_size,
            self.d_model,
            self.d_ff,
            self.max_len,
            self.n_task_classes,
        );
        v * d + l * d           // embeddings
            + 4 * d * d         // attention projections
            + d * f + f + f * d + d
            + 4 * d             // two layer norms
            + d * c + c
            + d * 2 + 2
            + d * v + v
    }
}

/// Whether AdamW weight decay applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

macro_rules! parameters {
    ($($field:ident: $name:literal, $kind:ident;)*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct EncoderModel {
            pub config: EncoderConfig,
            $(pub $field: Tensor,)*
        }

        /// Graph handles for every parameter of one forward pass.
        #[derive(Clone, Copy, Debug)]
        pub struct ModelVars {
            $(pub $field: Var,)*
        }

        pub const PARAM_NAMES: &[&str] = &[$($name),*];

        impl EncoderModel {
            /// `(name, kind, tensor)` in manifest order.
            pub fn params(&self) -> Vec<(&'static str, ParamKind, &Tensor)> {
                alloc::vec![$(($name, ParamKind::$kind, &self.$field)),*]
            }

            pub fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Tensor)> {
                alloc::vec![$(($name, ParamKind::$kind, &mut self.$field)),*]
            }
        }

        impl ModelVars {
            pub fn bind(graph: &mut Graph, model: &EncoderModel, requires_grad: bool) -> Self {
                Self { $($field: graph.leaf(model.$field.clone(), requires_grad),)* }
            }

            /// Handles in manifest order.
            pub fn all(&self) -> Vec<Var> {
                alloc::vec![$(self.$field),*]
            }

            /// Mutable handle by manifest position.
            pub fn slot_mut(&mut self, index: usize) -> Option<&mut Var> {
                let mut i = 0;
                $(
                    if i == index {
                        return Some(&mut self.$field);
                    }
                    i += 1;
                )*
                let _ = i;
                None
            }
        }
    };
}

parameters! {
    token_embedding: "token_embedding", Weight;
    position_embedding: "position_embedding", Weight;
    wq: "attn.wq", Weight;
    wk: "attn.wk", Weight;
    wv: "attn.wv", Weight;
    wo: "attn.wo", Weight;
    ln1_gamma: "ln1.gamma", Norm;
    ln1_beta: "ln1.beta", Norm;
    ln2_gamma: "ln2.gamma", Norm;
    ln2_beta: "ln2.beta", Norm;
    ff_w1: "ff.w1", Weight;
    ff_b1: "ff.b1", Bias;
    ff_w2: "ff.w2", Weight;
    ff_b2: "ff.b2", Bias;
    task_w: "task_head.w", Weight;
    task_b: "task_head.b", Bias;
    domain_w: "domain_head.w", Weight;
    domain_b: "domain_head.b", Bias;
    mlm_w: "mlm_head.w", Weight;
    mlm_b: "mlm_head.b", Bias;
}

/// Names of the parameters owned by the heads rather than the encoder.
pub fn is_head_param(name: &str) -> bool {
    name.starts_with("task_head") || name.starts_with("domain_head") || name.starts_with("mlm_head")
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| INIT_STD * standard_normal(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}

/// Fresh weights: N(0, 0.02²) matrices, unit layer-norm gains, zero biases and
/// a zero `[PAD]` embedding row. Deterministic in `config.seed`.
pub fn init_model(config: &EncoderConfig) -> Result<EncoderModel> {
    config.validate()?;
    let (v, d, f, c) = (config.vocab_size, config.d_model, config.d_ff, config.n_task_classes);
    let mut rng = sub_rng(config.seed, stream::INIT);
    let mut token_embedding = normal(&mut rng, v, d);
    token_embedding.row_mut(special::PAD).fill(0.0);
    Ok(EncoderModel {
        config: config.clone(),
        token_embedding,
        position_embedding: normal(&mut rng, config.max_len, d),
        wq: normal(&mut rng, d, d),
        wk: normal(&mut rng, d, d),
        wv: normal(&mut rng, d, d),
        wo: normal(&mut rng, d, d),
        ln1_gamma: Tensor::filled(1, d, 1.0),
        ln1_beta: Tensor::zeros(1, d),
        ln2_gamma: Tensor::filled(1, d, 1.0),
        ln2_beta: Tensor::zeros(1, d),
        ff_w1: normal(&mut rng, d, f),
        ff_b1: Tensor::zeros(1, f),
        ff_w2: normal(&mut rng, f, d),
        ff_b2: Tensor::zeros(1, d),
        task_w: normal(&mut rng, d, c),
        task_b: Tensor::zeros(1, c),
        domain_w: normal(&mut rng, d, 2),
        domain_b: Tensor::zeros(1, 2),
        mlm_w: normal(&mut rng, d, v),
        mlm_b: Tensor::zeros(1, v),
    })
}

impl EncoderModel {
    /// Replaces the task and domain heads with fresh ones, as done at the start
    /// of every fine-tuning run.
    pub fn reinit_heads(&mut self, n_task_classes: usize, seed: u64) -> Result<()> {
        if n_task_classes < 2 {
            return Err(config_err("n_task_classes must be >= 2"));
        }
        let d = self.config.d_model;
        let mut rng = sub_rng(seed, stream::HEAD_INIT);
        self.config.n_task_classes = n_task_classes;
        self.task_w = normal(&mut rng, d, n_task_classes);
        self.task_b = Tensor::zeros(1, n_task_classes);
        self.domain_w = normal(&mut rng, d, 2);
        self.domain_b = Tensor::zeros(1, 2);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let (v, d, f, l, k) = (c.vocab_size, c.d_model, c.d_ff, c.max_len, c.n_task_classes);
        let expected = [
            (v, d), (l, d), (d, d), (d, d), (d, d), (d, d),
            (1, d), (1, d), (1, d), (1, d),
            (d, f), (1, f), (f, d), (1, d),
            (d, k), (1, k), (d, 2), (1, 2), (d, v), (1, v),
        ];
        for ((name, _, t), shape) in self.params().iter().zip(expected) {
            if t.shape() != shape {
                return Err(config_err(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

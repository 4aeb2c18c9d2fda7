//! Domain-adversarial fine-tuning ("AFTER") on a desk-scale transformer encoder.
//!
//! The crate is `no_std` and only needs `alloc`. It contains everything that is
//! pure computation:
//!
//! - [`autodiff`]: a define-by-run reverse-mode engine over dense 2-D tensors,
//!   including the gradient reversal operation.
//! - [`model`]: a one-block encoder with `[CLS]` pooling and task, domain and
//!   masked-LM heads, plus the three fine-tuning objectives.
//! - [`data`]: tokenizer, vocabulary, MLM masking, the balanced two-domain
//!   batcher and a synthetic two-domain benchmark generator.
//! - [`training`]: AdamW, the warmup/decay schedule, MLM pretraining, fine-tuning
//!   with validation-loss model selection, and λ sweeps.
//! - [`metrics`] and [`analysis`]: classification metrics and corpus analytics
//!   (term distributions, Jensen-Shannon divergence, vocabulary overlap, probes).
//!
//! File formats, the parallel sweep runner and the command line live in the
//! `after` companion crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod autodiff;
pub mod data;
mod error;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

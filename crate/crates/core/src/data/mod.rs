//! Tokenization, vocabularies, datasets, MLM masking, batching and the
//! synthetic two-domain benchmark.

mod batcher;
mod dataset;
mod mask;
mod synth;
mod vocab;

pub use batcher::{BalancedBatcher, BatchPlan, Row};
pub use dataset::{Batch, Dataset, Domain, Example, Split};
pub use mask::{mlm_mask, MaskConfig, MaskedBatch, MaskedSequence};
pub use synth::{gen_synthetic, LabeledText, SynthSpec, SyntheticCorpus, SyntheticDatasets};
pub use vocab::{build_vocab, count_tokens, tokenize, top_k_words, Vocab};

/// Reserved token ids.
pub mod special {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const CLS: usize = 2;
    pub const SEP: usize = 3;
    pub const MASK: usize = 4;
    pub const COUNT: usize = 5;
    pub const TOKENS: [&str; COUNT] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
}

use alloc::vec::Vec;
use rand::Rng;

use super::{special, Batch, Example};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    pub prob: f64,
    /// Redraw until at least one position is selected.
    pub force_one: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            prob: 0.15,
            force_one: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub input_ids: Vec<usize>,
    /// Original ids at every position.
    pub targets: Vec<usize>,
    pub selected: Vec<bool>,
}

/// BERT-style corruption. Each non-special position is selected with
/// `config.prob`; selected positions become `[MASK]` 80% of the time, a uniform
/// random non-special token 10% and stay unchanged 10%.
pub fn mlm_mask<R: Rng + ?Sized>(
    ids: &[usize],
    vocab_size: usize,
    config: MaskConfig,
    rng: &mut R,
) -> Result<MaskedSequence> {
    if ids.first() != Some(&special::CLS) {
        return Err(Error::Input("sequence must start with [CLS]".into()));
    }
    if !(0.0..=1.0).contains(&config.prob) {
        return Err(Error::Config(alloc::format!("mask prob {} outside [0, 1]", config.prob)));
    }
    let maskable: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] >= special::COUNT).collect();
    if maskable.is_empty() {
        return Err(Error::Input("sequence has no maskable positions".into()));
    }
    if config.force_one && config.prob == 0.0 {
        return Err(Error::Config("cannot force a selection with mask prob 0".into()));
    }
    if vocab_size <= special::COUNT {
        return Err(Error::Config("vocabulary has no ordinary tokens".into()));
    }
    let mut selected = alloc::vec![false; ids.len()];
    loop {
        for &i in &maskable {
            selected[i] = rng.gen::<f64>() < config.prob;
        }
        if !config.force_one || selected.iter().any(|&s| s) {
            break;
        }
    }
    let mut input_ids = ids.to_vec();
    for (i, &sel) in selected.iter().enumerate() {
        if !sel {
            continue;
        }
        let r = rng.gen::<f64>();
        if r < 0.8 {
            input_ids[i] = special::MASK;
        } else if r < 0.9 {
            input_ids[i] = rng.gen_range(special::COUNT..vocab_size);
        }
    }
    Ok(MaskedSequence {
        input_ids,
        targets: ids.to_vec(),
        selected,
    })
}

/// Masked sequences padded into one batch, with flat `batch·seq` targets and
/// selection flags aligned to the batch layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub batch: Batch,
    pub targets: Vec<usize>,
    pub selected: Vec<bool>,
}

impl MaskedBatch {
    pub fn new(masked: &[MaskedSequence]) -> Self {
        let examples: Vec<Example> = masked
            .iter()
            .map(|m| Example::auxiliary(m.input_ids.clone()))
            .collect();
        let refs: Vec<&Example> = examples.iter().collect();
        let batch = Batch::from_examples(&refs);
        let s = batch.seq_len;
        let mut targets = alloc::vec![special::PAD; batch.batch * s];
        let mut selected = alloc::vec![false; batch.batch * s];
        for (b, m) in masked.iter().enumerate() {
            targets[b * s..b * s + m.targets.len()].copy_from_slice(&m.targets);
            selected[b * s..b * s + m.selected.len()].copy_from_slice(&m.selected);
        }
        Self { batch, targets, selected }
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

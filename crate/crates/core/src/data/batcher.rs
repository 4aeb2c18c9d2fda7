use alloc::vec::Vec;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{Batch, Dataset, Example};
use crate::rng::{stream, sub_rng, RunRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Row {
    Main(usize),
    Aux(usize),
}

/// Indices making up one mini-batch, in within-batch order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub rows: Vec<Row>,
}

impl BatchPlan {
    pub fn main_count(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r, Row::Main(_))).count()
    }

    pub fn aux_count(&self) -> usize {
        self.rows.len() - self.main_count()
    }
}

/// Yields epochs of mini-batches. With an auxiliary dataset every batch holds
/// equally many Main and Auxiliary rows; without one it is a plain shuffled
/// pass over Main.
///
/// An epoch is one full shuffled pass over Main. The Auxiliary side is a fresh
/// under-sample of `|Main|` examples per epoch, drawn without replacement
/// unless Auxiliary is the smaller set. The last batch may be short but keeps
/// the 1:1 ratio.
pub struct BalancedBatcher<'a> {
    main: &'a Dataset,
    aux: Option<&'a Dataset>,
    batch_size: usize,
    main_rng: RunRng,
    aux_rng: RunRng,
    shuffle_rng: RunRng,
}

impl<'a> BalancedBatcher<'a> {
    pub fn new(
        main: &'a Dataset,
        aux: Option<&'a Dataset>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if main.is_empty() {
            return Err(Error::Empty("main dataset"));
        }
        if aux.is_some_and(Dataset::is_empty) {
            return Err(Error::Empty("auxiliary dataset"));
        }
        if aux.is_some() && (batch_size < 2 || !batch_size.is_multiple_of(2)) {
            return Err(Error::Config(alloc::format!(
                "mixed batches need an even batch size >= 2, got {batch_size}"
            )));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            main,
            aux,
            batch_size,
            main_rng: sub_rng(seed, stream::MAIN_ORDER),
            aux_rng: sub_rng(seed, stream::AUX_SAMPLE),
            shuffle_rng: sub_rng(seed, stream::BATCH_SHUFFLE),
        })
    }

    /// True when Auxiliary is smaller than Main and gets sampled with replacement.
    pub fn aux_with_replacement(&self) -> bool {
        self.aux.is_some_and(|a| a.len() < self.main.len())
    }

    /// Main rows per batch.
    pub fn main_per_batch(&self) -> usize {
        if self.aux.is_some() {
            self.batch_size / 2
        } else {
            self.batch_size
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.main.len().div_ceil(self.main_per_batch())
    }

    pub fn next_epoch(&mut self) -> Vec<BatchPlan> {
        let n = self.main.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.main_rng);
        let aux_pick: Vec<usize> = match self.aux {
            None => Vec::new(),
            Some(aux) if aux.len() >= n => index::sample(&mut self.aux_rng, aux.len(), n).into_vec(),
            Some(aux) => (0..n).map(|_| self.aux_rng.gen_range(0..aux.len())).collect(),
        };
        let per = self.main_per_batch();
        order
            .chunks(per)
            .enumerate()
            .map(|(b, chunk)| {
                let mut rows: Vec<Row> = chunk.iter().map(|&i| Row::Main(i)).collect();
                if self.aux.is_some() {
                    let start = b * per;
                    rows.extend(aux_pick[start..start + chunk.len()].iter().map(|&i| Row::Aux(i)));
                    rows.shuffle(&mut self.shuffle_rng);
                }
                BatchPlan { rows }
            })
            .collect()
    }

    pub fn examples(&self, plan: &BatchPlan) -> Vec<&'a Example> {
        plan.rows
            .iter()
            .map(|r| match *r {
                Row::Main(i) => &self.main.examples[i],
                Row::Aux(i) => &self.aux.expect("aux row without aux dataset").examples[i],
            })
            .collect()
    }

    pub fn materialize(&self, plan: &BatchPlan) -> Batch {
        Batch::from_examples(&self.examples(plan))
    }
}

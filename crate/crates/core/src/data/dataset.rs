use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::special;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Labeled task data, domain label 0.
    Main,
    /// Unlabeled out-of-domain text, domain label 1.
    Auxiliary,
}

impl Domain {
    pub fn label(self) -> u8 {
        match self {
            Domain::Main => 0,
            Domain::Auxiliary => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub token_ids: Vec<usize>,
    pub task_label: Option<usize>,
    pub domain_label: u8,
}

impl Example {
    pub fn main(token_ids: Vec<usize>, label: usize) -> Self {
        Self {
            token_ids,
            task_label: Some(label),
            domain_label: 0,
        }
    }

    pub fn auxiliary(token_ids: Vec<usize>) -> Self {
        Self {
            token_ids,
            task_label: None,
            domain_label: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub domain: Domain,
    pub split: Split,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Checks the per-domain labeling rules.
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        split: Split,
        examples: Vec<Example>,
    ) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            let ok = match domain {
                Domain::Main => ex.task_label.is_some() && ex.domain_label == 0,
                Domain::Auxiliary => ex.task_label.is_none() && ex.domain_label == 1,
            };
            if !ok {
                return Err(Error::Input(alloc::format!(
                    "example {i} violates the {domain:?} labeling rules"
                )));
            }
            if ex.token_ids.first() != Some(&special::CLS) {
                return Err(Error::Input(alloc::format!("example {i} does not start with [CLS]")));
            }
        }
        Ok(Self {
            name: name.into(),
            domain,
            split,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of task classes: one past the largest label, at least two.
    pub fn n_classes(&self) -> usize {
        self.examples
            .iter()
            .filter_map(|e| e.task_label)
            .max()
            .map_or(2, |m| (m + 1).max(2))
    }
}

/// A padded mini-batch in the layout the encoder consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    /// `batch × seq_len`, row-major, padded with `[PAD]`.
    pub token_ids: Vec<usize>,
    /// `true` at real tokens.
    pub pad_mask: Vec<bool>,
    pub task_labels: Vec<Option<usize>>,
    pub domain_labels: Vec<u8>,
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Self {
        let batch = examples.len();
        let seq_len = examples.iter().map(|e| e.token_ids.len()).max().unwrap_or(0);
        let mut token_ids = alloc::vec![special::PAD; batch * seq_len];
        let mut pad_mask = alloc::vec![false; batch * seq_len];
        for (b, ex) in examples.iter().enumerate() {
            for (s, &id) in ex.token_ids.iter().enumerate() {
                token_ids[b * seq_len + s] = id;
                pad_mask[b * seq_len + s] = true;
            }
        }
        Self {
            batch,
            seq_len,
            token_ids,
            pad_mask,
            task_labels: examples.iter().map(|e| e.task_label).collect(),
            domain_labels: examples.iter().map(|e| e.domain_label).collect(),
        }
    }

    pub fn main_rows(&self) -> usize {
        self.task_labels.iter().filter(|l| l.is_some()).count()
    }
}

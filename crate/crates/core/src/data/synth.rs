use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, Vocab};
use crate::rng::{stream, sub_rng, RunRng};
use crate::{Error, Result};

/// Parameters of the synthetic two-domain benchmark.
///
/// Sentences mix class cue words (shared by both domains) with domain style
/// words. Within every word group, words are drawn from a Zipf law so the
/// corpus has realistic frequency structure for MLM pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub sentence_len: usize,
    /// Fraction of each sentence drawn from the class cue words.
    pub cue_frac: f64,
    /// Fraction of Main-train class-A sentences that get shortcut tokens.
    pub rho: f64,
    pub cue_words_per_class: usize,
    pub style_words_per_domain: usize,
    /// Size of the shortcut subset (the rarest domain-0 style words).
    pub shortcut_words: usize,
    pub shortcut_tokens: usize,
    pub zipf_exponent: f64,
    pub main_train: usize,
    pub main_val: usize,
    pub main_test: usize,
    pub aux: usize,
    pub pretrain: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            sentence_len: 20,
            cue_frac: 0.3,
            rho: 0.9,
            cue_words_per_class: 100,
            style_words_per_domain: 200,
            shortcut_words: 20,
            shortcut_tokens: 2,
            zipf_exponent: 1.3,
            main_train: 2000,
            main_val: 500,
            main_test: 500,
            aux: 10_000,
            pretrain: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub main_train: Vec<LabeledText>,
    pub main_val: Vec<LabeledText>,
    pub main_test: Vec<LabeledText>,
    /// Unlabeled, domain 1.
    pub aux: Vec<String>,
    /// Unlabeled, both domains.
    pub pretrain: Vec<String>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        frac("cue_frac", self.cue_frac)?;
        frac("rho", self.rho)?;
        if self.sentence_len == 0 {
            return Err(Error::Config("sentence_len must be positive".into()));
        }
        if self.cue_words_per_class == 0 || self.style_words_per_domain == 0 {
            return Err(Error::Config("word groups must be non-empty".into()));
        }
        if self.shortcut_words == 0 || self.shortcut_words > self.style_words_per_domain {
            return Err(Error::Config(format!(
                "shortcut_words must be in 1..={}",
                self.style_words_per_domain
            )));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config("zipf_exponent must be finite and >= 0".into()));
        }
        if self.main_train < 2 || self.main_val < 2 || self.main_test < 2 {
            return Err(Error::Config("main splits need at least two examples".into()));
        }
        if self.aux == 0 || self.pretrain == 0 {
            return Err(Error::Config("aux and pretrain corpora must be non-empty".into()));
        }
        Ok(())
    }

    fn cue_count(&self) -> usize {
        libm::round(self.cue_frac * self.sentence_len as f64) as usize
    }
}

/// Word for rank `k` of a group.
pub(crate) fn cue_word(class: usize, k: usize) -> String {
    format!("{}cue{k:03}", ['a', 'b'][class])
}

pub(crate) fn style_word(domain: usize, k: usize) -> String {
    format!("{}sty{k:03}", ['x', 'y'][domain])
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|k| {
                acc += libm::pow(k as f64, -s);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    fn sample(&self, rng: &mut RunRng) -> usize {
        let u = rng.gen::<f64>();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

struct Generator<'s> {
    spec: &'s SynthSpec,
    cue: Zipf,
    style: Zipf,
    rng: RunRng,
}

impl Generator<'_> {
    fn sentence(&mut self, class: usize, domain: usize, shortcut: bool) -> String {
        let n_cue = self.spec.cue_count();
        let mut words = Vec::with_capacity(self.spec.sentence_len + self.spec.shortcut_tokens);
        for _ in 0..n_cue {
            words.push(cue_word(class, self.cue.sample(&mut self.rng)));
        }
        for _ in n_cue..self.spec.sentence_len {
            words.push(style_word(domain, self.style.sample(&mut self.rng)));
        }
        if shortcut {
            let n = self.spec.style_words_per_domain;
            for _ in 0..self.spec.shortcut_tokens {
                let k = n - 1 - self.rng.gen_range(0..self.spec.shortcut_words);
                words.push(style_word(0, k));
            }
        }
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    fn labeled(&mut self, n: usize, shortcuts: bool) -> Vec<LabeledText> {
        let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        labels.shuffle(&mut self.rng);
        labels
            .into_iter()
            .map(|label| {
                let shortcut = shortcuts && label == 0 && self.rng.gen::<f64>() < self.spec.rho;
                LabeledText {
                    text: self.sentence(label, 0, shortcut),
                    label,
                }
            })
            .collect()
    }
}

/// A [`SyntheticCorpus`] encoded with a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasets {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub aux: Dataset,
    pub pretrain: Vec<Vec<usize>>,
}

impl SyntheticCorpus {
    pub fn encode(&self, vocab: &Vocab, max_len: usize) -> Result<SyntheticDatasets> {
        let main = |split, items: &[LabeledText]| {
            vocab.main_dataset("main", split, items.iter().map(|t| (t.text.as_str(), t.label)), max_len)
        };
        Ok(SyntheticDatasets {
            train: main(Split::Train, &self.main_train)?,
            validation: main(Split::Validation, &self.main_val)?,
            test: main(Split::Test, &self.main_test)?,
            aux: vocab.aux_dataset("aux", self.aux.iter().map(String::as_str), max_len)?,
            pretrain: self.pretrain.iter().map(|t| vocab.encode_text(t, max_len)).collect(),
        })
    }
}

/// Generates the benchmark. Identical specs give identical corpora.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        cue: Zipf::new(spec.cue_words_per_class, spec.zipf_exponent),
        style: Zipf::new(spec.style_words_per_domain, spec.zipf_exponent),
        rng: sub_rng(spec.seed, stream::SYNTH),
    };
    let main_train = g.labeled(spec.main_train, true);
    let main_val = g.labeled(spec.main_val, false);
    let main_test = g.labeled(spec.main_test, false);
    let aux = (0..spec.aux)
        .map(|_| {
            let class = g.rng.gen_range(0..2);
            g.sentence(class, 1, false)
        })
        .collect();
    let pretrain = (0..spec.pretrain)
        .map(|_| {
            let class = g.rng.gen_range(0..2);
            let domain = g.rng.gen_range(0..2);
            g.sentence(class, domain, false)
        })
        .collect();
    Ok(SyntheticCorpus {
        main_train,
        main_val,
        main_test,
        aux,
        pretrain,
    })
}

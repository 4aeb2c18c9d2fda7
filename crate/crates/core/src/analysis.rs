//! Corpus and representation analytics: term distributions over a joint
//! vocabulary, Jensen-Shannon divergence, vocabulary overlap, the average MLM
//! loss probe and a linear domain probe.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{
    count_tokens, mlm_mask, special, top_k_words, Batch, Dataset, Example, MaskConfig, MaskedBatch,
};
use crate::error::config_err;
use crate::math::{exp, log2, sqrt};
use crate::model::{EncoderModel, Forward};
use crate::rng::{stream, sub_rng};
use crate::{Error, Result};

/// Words per corpus entering the joint vocabulary of [`term_distributions`].
pub const TERM_TOP_K: usize = 5000;
/// Words per corpus compared by [`vocab_overlap`].
pub const OVERLAP_TOP_K: usize = 10_000;

/// Probability of every word of a joint vocabulary in one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermDistribution {
    pub vocab: Vec<String>,
    pub probs: Vec<f64>,
}

/// One distribution per corpus over `V`, the sorted union of every corpus's
/// `top_k` most frequent words. Words of `V` absent from a corpus get
/// probability 0.
pub fn term_distributions<S: AsRef<str>>(corpora: &[&[S]], top_k: usize) -> Result<Vec<TermDistribution>> {
    if corpora.is_empty() {
        return Err(Error::Empty("corpus list"));
    }
    let counts: Vec<BTreeMap<String, usize>> = corpora.iter().map(|c| count_tokens(c)).collect();
    if counts.iter().any(BTreeMap::is_empty) {
        return Err(Error::Empty("corpus"));
    }
    let joint: BTreeSet<String> = counts.iter().flat_map(|c| top_k_words(c, top_k)).collect();
    let vocab: Vec<String> = joint.into_iter().collect();
    Ok(counts
        .iter()
        .map(|c| {
            let raw: Vec<f64> = vocab.iter().map(|w| c.get(w).copied().unwrap_or(0) as f64).collect();
            let total: f64 = raw.iter().sum();
            TermDistribution {
                vocab: vocab.clone(),
                probs: raw.iter().map(|x| x / total).collect(),
            }
        })
        .collect())
}

/// Base-2 Jensen-Shannon divergence, in [0, 1].
pub fn js_divergence(p: &TermDistribution, q: &TermDistribution) -> Result<f64> {
    if p.vocab != q.vocab {
        return Err(Error::Input("term distributions are over different vocabularies".into()));
    }
    js_divergence_probs(&p.probs, &q.probs)
}

/// [`js_divergence`] on raw probability vectors.
pub fn js_divergence_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    // Two distributions with disjoint supports are exactly 1 apart; summing
    // the terms would leave the rounding error of the inputs' totals.
    if !p.iter().zip(q).any(|(&a, &b)| a > 0.0 && b > 0.0) {
        return Ok(1.0);
    }
    let half_kl = |a: f64, m: f64| if a > 0.0 { 0.5 * a * log2(a / m) } else { 0.0 };
    let jsd: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            half_kl(a, m) + half_kl(b, m)
        })
        .sum();
    // Rounding can leave tiny excursions outside the range.
    Ok(jsd.clamp(0.0, 1.0))
}

/// Percentage of `a`'s top-k word set that also appears in `b`'s top-k set.
/// Not symmetric.
pub fn vocab_overlap<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T], top_k: usize) -> Result<f64> {
    let set = |c: BTreeMap<String, usize>| -> Result<BTreeSet<String>> {
        if c.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        Ok(top_k_words(&c, top_k).into_iter().collect())
    };
    let va = set(count_tokens(a))?;
    let vb = set(count_tokens(b))?;
    Ok(100.0 * va.intersection(&vb).count() as f64 / va.len() as f64)
}

/// Row-by-column matrix of a pairwise corpus statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Overlap of every row corpus with every column corpus.
pub fn overlap_matrix<S: AsRef<str>>(
    rows: &[(String, &[S])],
    cols: &[(String, &[S])],
    top_k: usize,
) -> Result<Matrix> {
    let values = rows
        .iter()
        .map(|(_, a)| cols.iter().map(|(_, b)| vocab_overlap(a, b, top_k)).collect())
        .collect::<Result<_>>()?;
    Ok(Matrix {
        rows: rows.iter().map(|r| r.0.clone()).collect(),
        cols: cols.iter().map(|c| c.0.clone()).collect(),
        values,
    })
}

/// Symmetric JSD matrix over one joint vocabulary built from all corpora.
pub fn jsd_matrix<S: AsRef<str>>(corpora: &[(String, &[S])], top_k: usize) -> Result<Matrix> {
    let texts: Vec<&[S]> = corpora.iter().map(|c| c.1).collect();
    let dists = term_distributions(&texts, top_k)?;
    let values = dists
        .iter()
        .map(|p| dists.iter().map(|q| js_divergence(p, q)).collect())
        .collect::<Result<_>>()?;
    let names: Vec<String> = corpora.iter().map(|c| c.0.clone()).collect();
    Ok(Matrix { rows: names.clone(), cols: names, values })
}

/// Sequences per forward pass in the probes.
const PROBE_BATCH: usize = 64;

/// Average masked-LM cross-entropy (nats) of `model` over `sequences`, in eval
/// mode. Each pass draws fresh BERT-style masks; the result is the mean over
/// all masked tokens of all passes. Sequences without a maskable token are
/// skipped.
pub fn mlm_probe(model: &EncoderModel, sequences: &[Vec<usize>], seed: u64, n_passes: usize) -> Result<f64> {
    if n_passes == 0 {
        return Err(config_err("n_passes must be >= 1"));
    }
    let vocab = model.config.vocab_size;
    if let Some(&id) = sequences.iter().flatten().find(|&&id| id >= vocab) {
        return Err(Error::IndexOutOfRange { what: "token id", index: id, limit: vocab });
    }
    let usable: Vec<&Vec<usize>> = sequences
        .iter()
        .filter(|s| s.first() == Some(&special::CLS) && s.iter().any(|&id| id >= special::COUNT))
        .collect();
    if usable.is_empty() {
        return Err(Error::Empty("probe dataset"));
    }
    let mut rng = sub_rng(seed, stream::MLM_MASK);
    let (mut loss_sum, mut count) = (0.0, 0usize);
    for _ in 0..n_passes {
        for chunk in usable.chunks(PROBE_BATCH) {
            let masked = chunk
                .iter()
                .map(|s| mlm_mask(s, vocab, MaskConfig::default(), &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mb = MaskedBatch::new(&masked);
            let n = mb.selected_count();
            let mut fw = Forward::frozen(model);
            let loss = fw.mlm_loss(&mb.batch, &mb.targets, &mb.selected, None)?;
            loss_sum += fw.scalar(loss)? * n as f64;
            count += n;
        }
    }
    Ok(loss_sum / count as f64)
}

/// Examples per domain sampled by [`domain_probe`].
pub const PROBE_PER_DOMAIN: usize = 500;
const PROBE_MIN_PER_DOMAIN: usize = 20;
const PROBE_ITERS: usize = 200;
const PROBE_LR: f64 = 0.1;

/// Held-out accuracy of a logistic regression predicting the domain from
/// frozen `[CLS]` vectors. Up to 500 examples per domain are sampled; half of
/// each domain trains the probe, the other half tests it. 0.5 means the
/// domains are linearly indistinguishable.
pub fn domain_probe(model: &EncoderModel, main: &Dataset, aux: &Dataset, seed: u64) -> Result<f64> {
    let (features, labels) = probe_features(model, main, aux, seed)?;
    linear_probe(&features, &labels)
}

/// The sampled `[CLS]` vectors and domain labels that [`domain_probe`] fits.
pub fn probe_features(
    model: &EncoderModel,
    main: &Dataset,
    aux: &Dataset,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    for (d, name) in [(main, "main"), (aux, "auxiliary")] {
        if d.len() < PROBE_MIN_PER_DOMAIN {
            return Err(Error::Input(alloc::format!(
                "the domain probe needs at least {PROBE_MIN_PER_DOMAIN} {name} examples, got {}",
                d.len()
            )));
        }
    }
    let mut rng = sub_rng(seed, stream::PROBE);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (d, label) in [(main, 0u8), (aux, 1u8)] {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(PROBE_PER_DOMAIN);
        for chunk in idx.chunks(PROBE_BATCH) {
            let refs: Vec<&Example> = chunk.iter().map(|&i| &d.examples[i]).collect();
            let batch = Batch::from_examples(&refs);
            let mut fw = Forward::frozen(model);
            let repr = fw.encode(&batch, None)?;
            let cls = fw.value(repr.cls);
            for r in 0..cls.rows() {
                features.push(cls.row(r).to_vec());
                labels.push(label);
            }
        }
    }
    Ok((features, labels))
}

/// Trains a logistic regression on the first half of each class (in the given
/// order) and returns accuracy on the second halves. Features are z-scored
/// with training-half statistics; constant features become 0.
pub fn linear_probe(features: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch(features.len(), labels.len()));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Input("probe features must be non-empty rows of equal width".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Input(alloc::format!("probe needs two examples of class {class}")));
        }
        let half = members.len() / 2;
        train.extend_from_slice(&members[..half]);
        test.extend_from_slice(&members[half..]);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::NonBinary(bad as usize));
    }

    let n = train.len() as f64;
    let mut mean = alloc::vec![0.0; dim];
    let mut sd = alloc::vec![0.0; dim];
    for &i in &train {
        for (m, x) in mean.iter_mut().zip(&features[i]) {
            *m += x / n;
        }
    }
    for &i in &train {
        for ((s, m), x) in sd.iter_mut().zip(&mean).zip(&features[i]) {
            *s += (x - m) * (x - m) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(sqrt).collect();
    let z = |i: usize| -> Vec<f64> {
        features[i]
            .iter()
            .zip(&mean)
            .zip(&sd)
            .map(|((x, m), s)| if *s > 1e-12 { (x - m) / s } else { 0.0 })
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| z(i)).collect();
    let ys: Vec<f64> = train.iter().map(|&i| f64::from(labels[i])).collect();

    let mut w = alloc::vec![0.0; dim];
    let mut b = 0.0;
    let sigmoid = |t: f64| 1.0 / (1.0 + exp(-t));
    let logit = |w: &[f64], b: f64, x: &[f64]| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    for _ in 0..PROBE_ITERS {
        let mut gw = alloc::vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let err = sigmoid(logit(&w, b, x)) - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi / n;
            }
            gb += err / n;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= PROBE_LR * g;
        }
        b -= PROBE_LR * gb;
    }
    let hits = test
        .iter()
        .filter(|&&i| (logit(&w, b, &z(i)) > 0.0) == (labels[i] == 1))
        .count();
    Ok(hits as f64 / test.len() as f64)
}

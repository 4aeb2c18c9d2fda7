use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{special, Dataset, Domain, Example, Split};
use crate::{Error, Result};

/// Characters stripped from both ends of every whitespace-separated word.
const PUNCTUATION: &[char] = &[
    '!', '"', '#', '$', '%', '&', '\'', '(', ')', '*', '+', ',', '-', '.', '/', ':', ';', '<',
    '=', '>', '?', '@', '[', '\\', ']', '^', '_', '`', '{', '|', '}', '~', '«', '»', '“', '”',
    '‘', '’', '…', '—', '–', '¿', '¡',
];

/// Lower-cases, splits on Unicode whitespace and trims punctuation. Words that
/// are pure punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(PUNCTUATION))
        .filter(|w| !w.is_empty())
        .map(ToString::to_string)
        .collect()
}

pub fn count_tokens<S: AsRef<str>>(lines: &[S]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

/// The `k` most frequent words, ties broken lexicographically. Returns every
/// word when there are fewer than `k`.
pub fn top_k_words(counts: &BTreeMap<String, usize>, k: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps it for ties
    ranked.sort_by(|a, b| b.1.cmp(a.1));
    ranked.into_iter().take(k).map(|(w, _)| w.clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

/// Word-level vocabulary: the five specials, then the `max_size - 5` most
/// frequent corpus words.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocab> {
    if max_size <= special::COUNT {
        return Err(Error::Config(alloc::format!(
            "vocab max_size must exceed {}, got {max_size}",
            special::COUNT
        )));
    }
    let counts = count_tokens(corpus);
    if counts.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let words = top_k_words(&counts, max_size - special::COUNT);
    Vocab::from_tokens(special::TOKENS.iter().map(|s| s.to_string()).chain(words).collect())
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list (e.g. a vocab file).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < special::COUNT
            || tokens[..special::COUNT]
                .iter()
                .zip(special::TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Input("vocabulary must start with the five special tokens".into()));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Input(alloc::format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS]` followed by word ids (unknown words map to `[UNK]`), truncated
    /// to `max_len` ids in total. Never pads.
    pub fn encode_text(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(max_len.min(64));
        ids.push(special::CLS);
        for tok in tokenize(text) {
            if ids.len() >= max_len {
                break;
            }
            ids.push(self.id(&tok).unwrap_or(special::UNK));
        }
        ids
    }

    /// Encodes labeled texts into a Main dataset.
    pub fn main_dataset<'t>(
        &self,
        name: &str,
        split: Split,
        items: impl IntoIterator<Item = (&'t str, usize)>,
        max_len: usize,
    ) -> Result<Dataset> {
        let examples = items
            .into_iter()
            .map(|(text, label)| Example::main(self.encode_text(text, max_len), label))
            .collect();
        Dataset::new(name, Domain::Main, split, examples)
    }

    /// Encodes unlabeled texts into an Auxiliary training set.
    pub fn aux_dataset<'t>(
        &self,
        name: &str,
        texts: impl IntoIterator<Item = &'t str>,
        max_len: usize,
    ) -> Result<Dataset> {
        let examples = texts
            .into_iter()
            .map(|text| Example::auxiliary(self.encode_text(text, max_len)))
            .collect();
        Dataset::new(name, Domain::Auxiliary, Split::Train, examples)
    }

    /// Space-joined tokens after the leading `[CLS]`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let body = match ids.first() {
            Some(&special::CLS) => &ids[1..],
            _ => ids,
        };
        body.iter()
            .map(|&i| self.token(i).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

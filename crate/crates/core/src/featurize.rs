//! Raw text to n-gram id lists.
//!
//! Ids come out in extraction order (all n-grams of one order, left to right,
//! then the next order) with duplicates kept, so pooling sees the multiset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{for_each_ngram, tokenize_into};
use crate::vocab::NgramVocab;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeaturizedExample {
    pub ids: Vec<u32>,
    /// Every extracted n-gram, in vocab or not.
    pub total_ngrams: usize,
    /// Extracted n-grams found in the vocab; equals `ids.len()`.
    pub matched_ngrams: usize,
    pub label: Option<usize>,
    pub teacher_probs: Option<Vec<f64>>,
}

impl FeaturizedExample {
    pub fn coverage_ratio(&self) -> Result<f64> {
        coverage_ratio(self.matched_ngrams, self.total_ngrams)
    }
}

/// Sentence pair; supervision lives at the pair level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairExample {
    pub left: FeaturizedExample,
    pub right: FeaturizedExample,
    pub label: Option<usize>,
    pub teacher_probs: Option<Vec<f64>>,
}

/// Anything the model can consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Example {
    Single(FeaturizedExample),
    Pair(PairExample),
}

impl Example {
    pub fn label(&self) -> Option<usize> {
        match self {
            Example::Single(e) => e.label,
            Example::Pair(p) => p.label,
        }
    }

    pub fn teacher_probs(&self) -> Option<&[f64]> {
        match self {
            Example::Single(e) => e.teacher_probs.as_deref(),
            Example::Pair(p) => p.teacher_probs.as_deref(),
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, Example::Pair(_))
    }

    /// `(matched, total)` summed over both sides for pairs.
    pub fn coverage_counts(&self) -> (usize, usize) {
        match self {
            Example::Single(e) => (e.matched_ngrams, e.total_ngrams),
            Example::Pair(p) => (
                p.left.matched_ngrams + p.right.matched_ngrams,
                p.left.total_ngrams + p.right.total_ngrams,
            ),
        }
    }
}

impl From<FeaturizedExample> for Example {
    fn from(e: FeaturizedExample) -> Self {
        Example::Single(e)
    }
}

impl From<PairExample> for Example {
    fn from(p: PairExample) -> Self {
        Example::Pair(p)
    }
}

/// Reusable featurizer bound to one vocabulary and cutoff.
#[derive(Clone, Copy)]
pub struct Featurizer<'v> {
    vocab: &'v NgramVocab,
    n_min: usize,
    n_max: usize,
}

impl<'v> Featurizer<'v> {
    pub fn new(vocab: &'v NgramVocab, n_cutoff: Option<usize>) -> Result<Self> {
        let (n_min, n_max) = vocab.n_range();
        let n_max = match n_cutoff {
            None => n_max,
            Some(c) if c >= n_min && c <= n_max => c,
            Some(c) => {
                return Err(Error::config(format!(
                    "n-gram cutoff {c} outside vocab range ({n_min}, {n_max})"
                )))
            }
        };
        Ok(Featurizer { vocab, n_min, n_max })
    }

    pub fn vocab(&self) -> &'v NgramVocab {
        self.vocab
    }

    /// Featurizes with a caller-provided scratch buffer; the hot path for
    /// benchmarks.
    pub fn featurize_with(&self, text: &str, scratch: &mut String) -> FeaturizedExample {
        let tokens = tokenize_into(text, scratch);
        let mut ids = Vec::new();
        let mut total = 0usize;
        for_each_ngram(&tokens, self.n_min, self.n_max, |_, key| {
            total += 1;
            if let Some(id) = self.vocab.get(key) {
                ids.push(id);
            }
        });
        FeaturizedExample {
            matched_ngrams: ids.len(),
            ids,
            total_ngrams: total,
            label: None,
            teacher_probs: None,
        }
    }

    pub fn featurize(&self, text: &str) -> FeaturizedExample {
        self.featurize_with(text, &mut String::new())
    }

    pub fn featurize_pair(&self, left: &str, right: &str) -> PairExample {
        let mut scratch = String::new();
        PairExample {
            left: self.featurize_with(left, &mut scratch),
            right: self.featurize_with(right, &mut scratch),
            label: None,
            teacher_probs: None,
        }
    }
}

/// One-shot featurization of `text` under `vocab`, optionally restricted to
/// n-grams of order at most `n_cutoff`.
pub fn featurize(text: &str, vocab: &NgramVocab, n_cutoff: Option<usize>) -> Result<FeaturizedExample> {
    Ok(Featurizer::new(vocab, n_cutoff)?.featurize(text))
}

/// `matched / total`; undefined for inputs with no n-grams.
pub fn coverage_ratio(matched: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::UndefinedCoverage);
    }
    Ok(matched as f64 / total as f64)
}

/// Order-preserving batch featurization. `workers == 0` uses the ambient
/// rayon pool; otherwise a dedicated pool of that size.
pub fn featurize_stream<S>(
    documents: &[S],
    vocab: &NgramVocab,
    n_cutoff: Option<usize>,
    workers: usize,
) -> Result<Vec<FeaturizedExample>>
where
    S: AsRef<str> + Sync,
{
    let fz = Featurizer::new(vocab, n_cutoff)?;
    let run = || {
        documents
            .par_iter()
            .map_init(String::new, |scratch, d| fz.featurize_with(d.as_ref(), scratch))
            .collect()
    };
    if workers == 0 {
        Ok(run())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(e.to_string()))?;
        Ok(pool.install(run))
    }
}

//! Post-hoc vocabulary pruning and n-gram order cutoffs.
//!
//! Pruning keeps the most frequent n-grams under a chosen frequency source
//! and rebuilds a dense id space, so the pruned model file shrinks with the
//! vocabulary. Surviving embedding rows are copied bit for bit and the dense
//! head is left alone.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{to_examples, DataKind, Numbered};
use crate::error::{Error, Result};
use crate::featurize::Featurizer;
use crate::model::{DanModel, Real};
use crate::optim::evaluate;
use crate::vocab::{FrequencySource, NgramVocab, TieBreak};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keep {
    /// Keep `ceil(fraction * |V|)` entries; fraction in `(0, 1]`.
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSpec {
    pub keep: Keep,
    pub source: FrequencySource,
    /// Frequency of every vocab id, indexed by id.
    pub frequencies: Vec<u64>,
    pub tiebreak: TieBreak,
}

impl PruneSpec {
    pub fn new(keep: Keep, source: FrequencySource, frequencies: Vec<u64>) -> Self {
        PruneSpec {
            keep,
            source,
            frequencies,
            tiebreak: TieBreak::Lexicographic,
        }
    }

    /// Number of entries kept out of `vocab_len`.
    pub fn keep_count(&self, vocab_len: usize) -> Result<usize> {
        let count = match self.keep {
            Keep::Count(c) => c,
            Keep::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Prune(format!("keep fraction {f} outside (0, 1]")));
                }
                let exact = f * vocab_len as f64;
                let nearest = exact.round();
                // f * |V| is often an integer up to rounding noise.
                if (exact - nearest).abs() <= 1e-9 * vocab_len.max(1) as f64 {
                    nearest as usize
                } else {
                    exact.ceil() as usize
                }
            }
        };
        if count == 0 {
            return Err(Error::Prune("cannot prune to an empty vocabulary".into()));
        }
        if count > vocab_len {
            return Err(Error::Prune(format!(
                "keep count {count} exceeds vocabulary size {vocab_len}"
            )));
        }
        Ok(count)
    }
}

/// Ids of the `count` highest-ranked entries under `frequencies`, in rank
/// order.
pub fn kept_ids(vocab: &NgramVocab, frequencies: &[u64], count: usize, tiebreak: TieBreak) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..vocab.len() as u32).collect();
    let cmp = |a: &u32, b: &u32| {
        tiebreak.rank(
            (frequencies[*a as usize], vocab.ngram(*a)),
            (frequencies[*b as usize], vocab.ngram(*b)),
        )
    };
    if count < ids.len() {
        ids.select_nth_unstable_by(count, cmp);
        ids.truncate(count);
    }
    ids.sort_unstable_by(cmp);
    ids
}

pub fn prune_model<T: Real>(model: &DanModel<T>, spec: &PruneSpec) -> Result<DanModel<T>> {
    let vocab = model.vocab();
    if spec.frequencies.len() != vocab.len() {
        return Err(Error::Prune(format!(
            "frequencies cover {} ids, vocabulary has {}",
            spec.frequencies.len(),
            vocab.len()
        )));
    }
    let count = spec.keep_count(vocab.len())?;
    let kept = kept_ids(vocab, &spec.frequencies, count, spec.tiebreak);
    let entries = kept
        .iter()
        .map(|&id| (vocab.ngram(id).to_owned(), spec.frequencies[id as usize]))
        .collect();
    let new_vocab = NgramVocab::from_ranked(entries, vocab.n_range(), spec.source)?;
    let mut embedding = Vec::with_capacity(count * model.embed_dim());
    for &id in &kept {
        embedding.extend_from_slice(model.row(id));
    }
    DanModel::from_parts(
        model.config().clone(),
        Arc::new(new_vocab),
        embedding,
        model.layers.clone(),
        model.attention.clone(),
    )
}

/// Accuracy of `model` on raw records, featurized under its own vocab.
pub fn evaluate_records(model: &DanModel, records: &[Numbered], n_cutoff: Option<usize>) -> Result<f64> {
    let fz = Featurizer::new(model.vocab(), n_cutoff)?;
    let examples = to_examples(
        records,
        &fz,
        model.config().pair_mode,
        DataKind::Labeled,
        model.n_classes(),
    )?;
    Ok(evaluate(model, &examples)?.accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub keep_count: usize,
    pub total_params: u64,
    pub sparse_params: u64,
    pub dense_params: u64,
    pub file_bytes: usize,
    pub accuracy: f64,
}

/// Prunes to each fraction and evaluates on `dev`.
pub fn prune_sweep(
    model: &DanModel,
    source: FrequencySource,
    frequencies: &[u64],
    fractions: &[f64],
    dev: &[Numbered],
) -> Result<Vec<SweepRow>> {
    fractions
        .iter()
        .map(|&fraction| {
            let spec = PruneSpec::new(Keep::Fraction(fraction), source, frequencies.to_vec());
            let pruned = prune_model(model, &spec)?;
            let params = pruned.param_count();
            Ok(SweepRow {
                fraction,
                keep_count: pruned.vocab().len(),
                total_params: params.total,
                sparse_params: params.sparse,
                dense_params: params.dense,
                file_bytes: pruned.to_bytes().len(),
                accuracy: evaluate_records(&pruned, dev, None)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,keep_count,total_params,sparse_params,dense_params,file_bytes,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.fraction, r.keep_count, r.total_params, r.sparse_params, r.dense_params, r.file_bytes, r.accuracy
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub n_cutoff: usize,
    /// Vocab entries of order at most `n_cutoff`.
    pub effective_vocab: usize,
    pub accuracy: f64,
}

/// Dev accuracy with n-grams longer than each cutoff ignored.
pub fn cutoff_eval(model: &DanModel, dev: &[Numbered], cutoffs: &[usize]) -> Result<Vec<CutoffRow>> {
    cutoffs
        .iter()
        .map(|&c| {
            Ok(CutoffRow {
                n_cutoff: c,
                effective_vocab: model.vocab().effective_size(c),
                accuracy: evaluate_records(model, dev, Some(c))?,
            })
        })
        .collect()
}

pub fn cutoff_csv(rows: &[CutoffRow]) -> String {
    let mut out = String::from("n_cutoff,effective_vocab,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.n_cutoff, r.effective_vocab, r.accuracy));
    }
    out
}

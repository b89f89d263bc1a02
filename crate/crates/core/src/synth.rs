//! Synthetic classification tasks with known generating rules.
//!
//! These stand in for real corpora in tests, the acceptance suite and demos:
//! the rule that labels a document doubles as an oracle teacher, so
//! distillation can be exercised end to end without a transformer.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Record;

/// Two-class task whose label is the sign of a weighted count of signal
/// words.
///
/// Words `w0..w{n}` are drawn independently with Zipf-like frequencies
/// (`rank^-zipf`, `zipf = 0` is uniform). Signal words are drawn from the
/// `signal_rank_limit` most frequent ranks and carry weights of random sign
/// and magnitude in `[0.5, 1.5]`; all other words weigh 0. A document is
/// positive iff its total weight is strictly positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalTask {
    pub n_words: usize,
    pub doc_len: usize,
    pub zipf: f64,
    /// Teacher confidence: `P(positive) = sigmoid(sharpness * score)`.
    pub sharpness: f64,
    weights: Vec<f64>,
    #[serde(skip)]
    sampler: Option<WeightedIndex<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SignalTaskConfig {
    pub n_words: usize,
    pub doc_len: usize,
    pub signal_words: usize,
    pub signal_rank_limit: usize,
    pub zipf: f64,
    pub sharpness: f64,
}

impl Default for SignalTaskConfig {
    fn default() -> Self {
        SignalTaskConfig {
            n_words: 2000,
            doc_len: 20,
            signal_words: 600,
            signal_rank_limit: 2000,
            zipf: 0.0,
            sharpness: 2.0,
        }
    }
}

impl SignalTask {
    pub fn new(config: SignalTaskConfig, seed: u64) -> Self {
        assert!(config.n_words > 0 && config.doc_len > 0);
        let limit = config.signal_rank_limit.min(config.n_words);
        assert!(config.signal_words <= limit, "more signal words than eligible ranks");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; config.n_words];
        let chosen = rand::seq::index::sample(&mut rng, limit, config.signal_words);
        for idx in chosen.iter() {
            let magnitude = rng.gen_range(0.5..=1.5);
            weights[idx] = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        }
        let mut task = SignalTask {
            n_words: config.n_words,
            doc_len: config.doc_len,
            zipf: config.zipf,
            sharpness: config.sharpness,
            weights,
            sampler: None,
        };
        task.sampler = Some(task.make_sampler());
        task
    }

    fn make_sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new((1..=self.n_words).map(|r| (r as f64).powf(-self.zipf))).expect("valid weights")
    }

    pub fn word(i: usize) -> String {
        format!("w{i}")
    }

    pub fn weight(&self, word: usize) -> f64 {
        self.weights[word]
    }

    pub fn sample_text<R: Rng>(&self, rng: &mut R) -> String {
        let owned;
        let sampler = match &self.sampler {
            Some(s) => s,
            None => {
                owned = self.make_sampler();
                &owned
            }
        };
        (0..self.doc_len)
            .map(|_| Self::word(sampler.sample(rng)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn score(&self, text: &str) -> f64 {
        text.split_whitespace()
            .filter_map(|t| t.strip_prefix('w')?.parse::<usize>().ok())
            .filter(|&i| i < self.n_words)
            .map(|i| self.weights[i])
            .sum()
    }

    pub fn label(&self, text: &str) -> usize {
        (self.score(text) > 0.0) as usize
    }

    /// The oracle teacher's distribution. Its argmax agrees with
    /// [`SignalTask::label`] whenever the score is nonzero.
    pub fn teacher_probs(&self, text: &str) -> Vec<f64> {
        let p = 1.0 / (1.0 + (-self.sharpness * self.score(text)).exp());
        vec![1.0 - p, p]
    }

    pub fn texts(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_text(&mut rng)).collect()
    }

    pub fn labeled(&self, n: usize, seed: u64) -> Vec<Record> {
        self.texts(n, seed)
            .into_iter()
            .map(|t| {
                let l = self.label(&t);
                Record::single(t).with_label(l)
            })
            .collect()
    }

    /// Teacher-labeled records without gold labels.
    pub fn soft_labeled(&self, n: usize, seed: u64) -> Vec<Record> {
        self.texts(n, seed)
            .into_iter()
            .map(|t| {
                let p = self.teacher_probs(&t);
                Record::single(t).with_probs(p)
            })
            .collect()
    }
}

/// Two-class task decided only by word order: each document embeds one
/// signal pair `a_k b_k` (positive) or `b_k a_k` (negative) among filler
/// words, so unigram counts carry no information about the label.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BigramTask {
    pub n_pairs: usize,
    pub n_fillers: usize,
    pub doc_len: usize,
}

impl Default for BigramTask {
    fn default() -> Self {
        BigramTask {
            n_pairs: 20,
            n_fillers: 50,
            doc_len: 8,
        }
    }
}

impl BigramTask {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (String, usize) {
        assert!(self.doc_len >= 2 && self.n_pairs > 0 && self.n_fillers > 0);
        let label = rng.gen_range(0..2);
        let k = rng.gen_range(0..self.n_pairs);
        let (first, second) = if label == 1 {
            (format!("a{k}"), format!("b{k}"))
        } else {
            (format!("b{k}"), format!("a{k}"))
        };
        let at = rng.gen_range(0..self.doc_len - 1);
        let mut tokens = Vec::with_capacity(self.doc_len);
        while tokens.len() < self.doc_len {
            if tokens.len() == at {
                tokens.push(first.clone());
                tokens.push(second.clone());
            } else {
                tokens.push(format!("f{}", rng.gen_range(0..self.n_fillers)));
            }
        }
        (tokens.join(" "), label)
    }

    pub fn labeled(&self, n: usize, seed: u64) -> Vec<Record> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (t, l) = self.sample(&mut rng);
                Record::single(t).with_label(l)
            })
            .collect()
    }
}

//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. Everything here is written independently of the library code it
//! checks: losses from logits by hand, n-gram counts by brute force, Adam
//! over a flat parameter vector.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparse_dan::dataset::{Numbered, Record};
use sparse_dan::optim::{backward, AdamConfig, Batch, LossMode, TrainState};
use sparse_dan::{DanModel, Example, FeaturizedExample, FrequencySource, ModelConfig, NgramVocab, PairExample, Pooling};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn numbered(records: Vec<Record>) -> Vec<Numbered> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, record)| Numbered { line: i + 1, record })
        .collect()
}

/// Unigram vocab `t0..t{n}` with descending frequencies.
pub fn toy_vocab(n: usize) -> Arc<NgramVocab> {
    let entries = (0..n).map(|i| (format!("t{i}"), (n - i) as u64)).collect();
    Arc::new(NgramVocab::from_ranked(entries, (1, 1), FrequencySource::TrainOnly).unwrap())
}

/// A model whose every parameter, biases included, is uniform in `[-1, 1]`,
/// so no gradient is structurally tiny.
pub fn toy_model(config: ModelConfig, vocab_size: usize, seed: u64) -> DanModel {
    let mut m = DanModel::new(toy_vocab(vocab_size), config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for x in m.embedding.iter_mut() {
        *x = r.gen_range(-1.0..1.0);
    }
    for p in m.dense_params_mut() {
        for x in p.iter_mut() {
            *x = r.gen_range(-1.0..1.0);
        }
    }
    m
}

pub fn toy_config(pooling: Pooling, pair_mode: bool, hidden: Vec<usize>) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        hidden,
        n_classes: 3,
        pooling,
        pair_mode,
        attention_dim: 3,
    }
}

fn random_ids(r: &mut ChaCha8Rng, vocab_size: usize, max_len: usize) -> Vec<u32> {
    let len = r.gen_range(1..=max_len);
    (0..len).map(|_| r.gen_range(0..vocab_size as u32)).collect()
}

pub fn random_probs(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn single(ids: Vec<u32>) -> FeaturizedExample {
    FeaturizedExample {
        total_ngrams: ids.len(),
        matched_ngrams: ids.len(),
        ids,
        label: None,
        teacher_probs: None,
    }
}

/// Random supervised examples for `model`'s input kind. Ids repeat within
/// an example.
pub fn random_examples(model: &DanModel, n: usize, mode: LossMode, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    let v = model.vocab().len();
    let k = model.n_classes();
    (0..n)
        .map(|_| {
            let (label, probs) = match mode {
                LossMode::Ft => (Some(r.gen_range(0..k)), None),
                LossMode::Kd => (None, Some(random_probs(&mut r, k))),
            };
            if model.config().pair_mode {
                Example::Pair(PairExample {
                    left: single(random_ids(&mut r, v, 6)),
                    right: single(random_ids(&mut r, v, 6)),
                    label,
                    teacher_probs: probs,
                })
            } else {
                let mut e = single(random_ids(&mut r, v, 6));
                e.label = label;
                e.teacher_probs = probs;
                Example::Single(e)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Loss and finite differences

/// Batch-mean loss computed from the forward logits with a hand-written
/// tempered softmax and KL/cross-entropy.
pub fn reference_loss(model: &DanModel, examples: &[Example], mode: LossMode, temperature: f64) -> f64 {
    let mut total = 0.0;
    for ex in examples {
        let z = model.forward(ex.input()).unwrap().logits;
        let t = if mode == LossMode::Kd { temperature } else { 1.0 };
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // log softmax(z / t) = (z - m)/t - ln sum exp((z - m)/t)
        let s = z.iter().map(|x| ((x - m) / t).exp()).sum::<f64>().ln();
        let log_q: Vec<f64> = z.iter().map(|x| (x - m) / t - s).collect();
        total += match mode {
            LossMode::Ft => -log_q[ex.label().unwrap()],
            LossMode::Kd => ex
                .teacher_probs()
                .unwrap()
                .iter()
                .zip(&log_q)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, lq)| p * (p.ln() - lq))
                .sum(),
        };
    }
    total / examples.len() as f64
}

/// Parameter classes reported by the gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `(class, worst relative error, entries compared)`.
    pub classes: Vec<(String, f64, usize)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.classes.iter().map(|c| c.1).fold(0.0, f64::max)
    }
}

/// Denominator floor for the relative error. Central differences at
/// `h = 1e-6` carry absolute noise near `1e-10`; a floor of `1e-6` keeps
/// that noise below `1e-4` relative for entries that are nearly zero.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients against central differences for every
/// dense parameter and every embedding row touched by the batch. Rows not
/// touched must have analytically and numerically zero gradient; one such
/// row is probed.
pub fn check_gradients(model: &DanModel, examples: &[Example], mode: LossMode, temperature: f64, h: f64) -> GradCheck {
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = Batch::new(refs, mode, model.n_classes()).unwrap();
    let analytic = backward(model, &batch, temperature, false).unwrap().gradients;
    let loss = |m: &DanModel| reference_loss(m, examples, mode, temperature);
    let mut classes = Vec::new();

    let names = model.dense_param_names();
    for (t, name) in names.iter().enumerate() {
        let len = model.dense_params()[t].len();
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let mut plus = model.clone();
            plus.dense_params_mut()[t][i] += h;
            let mut minus = model.clone();
            minus.dense_params_mut()[t][i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.dense[t][i], numeric));
        }
        classes.push((name.clone(), worst, len));
    }

    let de = model.embed_dim();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (&id, row) in &analytic.embedding {
        for j in 0..de {
            let mut plus = model.clone();
            plus.row_mut(id)[j] += h;
            let mut minus = model.clone();
            minus.row_mut(id)[j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(row[j], numeric));
            count += 1;
        }
    }
    let used: std::collections::HashSet<u32> = examples
        .iter()
        .flat_map(|e| match e {
            Example::Single(s) => s.ids.clone(),
            Example::Pair(p) => p.left.ids.iter().chain(&p.right.ids).copied().collect(),
        })
        .collect();
    if let Some(untouched) = (0..model.vocab().len() as u32).find(|i| !used.contains(i)) {
        assert!(!analytic.embedding.contains_key(&untouched));
        for j in 0..de {
            let mut plus = model.clone();
            plus.row_mut(untouched)[j] += h;
            let mut minus = model.clone();
            minus.row_mut(untouched)[j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(0.0, numeric));
            count += 1;
        }
    }
    classes.push(("embedding".to_string(), worst, count));
    GradCheck { classes }
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Every n-gram of every document, counted in a hash map and fully sorted:
/// frequency descending, then byte-wise ascending.
pub fn brute_force_vocab(docs: &[String], n_min: usize, n_max: usize, top_k: usize) -> Vec<(String, u64)> {
    let counts = brute_force_counts(docs, n_min, n_max);
    let mut all: Vec<(String, u64)> = counts.into_iter().collect();
    all.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(top_k);
    all
}

pub fn brute_force_counts(docs: &[String], n_min: usize, n_max: usize) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for d in docs {
        let lower = d.to_lowercase();
        let toks: Vec<&str> = lower.split_whitespace().collect();
        for n in n_min..=n_max {
            if n > toks.len() {
                break;
            }
            for w in toks.windows(n) {
                *counts.entry(w.join(" ")).or_default() += 1;
            }
        }
    }
    counts
}

/// Random documents over a small alphabet with mixed case and assorted
/// Unicode whitespace, so ties and normalization both get exercised.
pub fn random_corpus(seed: u64, max_tokens: usize) -> Vec<String> {
    let mut r = rng(seed);
    let alphabet = r.gen_range(2..30);
    let n_docs = r.gen_range(1..60);
    let seps = [" ", "  ", "\t", "\n", "\u{3000}", " \u{a0}"];
    let mut budget = max_tokens;
    let mut docs = Vec::new();
    for _ in 0..n_docs {
        let len = r.gen_range(0..=40.min(budget));
        budget -= len;
        let mut d = String::new();
        for i in 0..len {
            if i > 0 {
                d.push_str(seps[r.gen_range(0..seps.len())]);
            }
            let w = format!("w{}", r.gen_range(0..alphabet));
            d.push_str(&if r.gen_bool(0.1) { w.to_uppercase() } else { w });
        }
        docs.push(d);
    }
    if docs.iter().all(|d| d.split_whitespace().next().is_none()) {
        docs.push("w0".into());
    }
    docs
}

// ---------------------------------------------------------------------------
// Dense Adam reference

/// Textbook Adam over one flat vector holding every parameter, embedding
/// table included; every weight is updated every step.
pub struct DenseAdam {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl DenseAdam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        DenseAdam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = self.cfg;
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / (1.0 - c.beta1.powi(self.t));
            let vh = self.v[i] / (1.0 - c.beta2.powi(self.t));
            params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

/// Examples that between them use every id, so every row has a gradient
/// at every step.
pub fn covering_batch(model: &DanModel, seed: u64) -> Vec<Example> {
    let mut ex = random_examples(model, 6, LossMode::Kd, seed);
    if let Example::Single(e) = &mut ex[0] {
        e.ids = (0..model.vocab().len() as u32).collect();
    }
    ex
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `steps` updates of the sparse optimizer and the flat dense
/// reference, each on its own copy and its own gradients.
pub fn adam_trajectory_deviation(pooling: Pooling, steps: usize, cfg: AdamConfig) -> f64 {
    let start = toy_model(toy_config(pooling, false, vec![5]), 10, 1);
    let mut sparse = start.clone();
    let mut state = TrainState::new(&sparse, cfg);
    let mut dense = start.clone();
    let mut flat = flatten(&dense);
    let mut reference = DenseAdam::new(cfg, flat.len());
    let mut worst: f64 = 0.0;
    for step in 0..steps {
        let ex = covering_batch(&start, step as u64);
        let batch = Batch::new(ex.iter().collect(), LossMode::Kd, 3).unwrap();
        let g = backward(&sparse, &batch, 1.0, false).unwrap().gradients;
        assert_eq!(g.embedding.len(), start.vocab().len());
        state.step(&mut sparse, &g);

        let gd = backward(&dense, &batch, 1.0, false).unwrap().gradients;
        reference.step(&mut flat, &flatten_grads(&dense, &gd));
        unflatten(&mut dense, &flat);
        worst = worst.max(max_abs_diff(&flatten(&sparse), &flat));
    }
    worst
}

pub fn flatten(model: &DanModel) -> Vec<f64> {
    let mut out = model.embedding.clone();
    for p in model.dense_params() {
        out.extend_from_slice(p);
    }
    out
}

pub fn unflatten(model: &mut DanModel, flat: &[f64]) {
    let n = model.embedding.len();
    model.embedding.copy_from_slice(&flat[..n]);
    let mut at = n;
    for p in model.dense_params_mut() {
        p.copy_from_slice(&flat[at..at + p.len()]);
        at += p.len();
    }
}

pub fn flatten_grads(model: &DanModel, g: &sparse_dan::optim::Gradients) -> Vec<f64> {
    let de = model.embed_dim();
    let mut out = vec![0.0; model.embedding.len()];
    for (&id, row) in &g.embedding {
        out[id as usize * de..(id as usize + 1) * de].copy_from_slice(row);
    }
    for d in &g.dense {
        out.extend_from_slice(d);
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (icpt + slope * a)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// Synthetic experiments

pub mod experiments {
    use std::sync::Arc;
    use std::time::Instant;

    use sparse_dan::dataset::{to_examples, DataKind, Numbered, Record};
    use sparse_dan::optim::{evaluate, train, TrainConfig};
    use sparse_dan::prune::{cutoff_eval, evaluate_records, prune_model, Keep, PruneSpec};
    use sparse_dan::synth::{BigramTask, SignalTask, SignalTaskConfig};
    use sparse_dan::vocab::{build_vocab, ngram_frequencies};
    use sparse_dan::{DanModel, Example, Featurizer, FrequencySource, ModelConfig, NgramVocab, VocabConfig};

    use super::numbered;

    pub fn small_model() -> ModelConfig {
        ModelConfig {
            embed_dim: 32,
            hidden: vec![32],
            ..ModelConfig::default()
        }
    }

    fn vocab_over(records: &[&[Record]], n_max: usize, top_k: usize, source: FrequencySource) -> Arc<NgramVocab> {
        let docs: Vec<&str> = records.iter().flat_map(|r| r.iter()).flat_map(|r| r.texts()).collect();
        let cfg = VocabConfig {
            source,
            ..VocabConfig::new(1, n_max, top_k)
        };
        Arc::new(build_vocab(docs, &cfg).unwrap())
    }

    fn examples(vocab: &NgramVocab, records: Vec<Record>, kind: DataKind) -> Vec<Example> {
        let fz = Featurizer::new(vocab, None).unwrap();
        to_examples(&numbered(records), &fz, false, kind, 2).unwrap()
    }

    pub fn ft_config(lr: f64, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr,
            epochs,
            batch_size: 32,
            seed,
            ..TrainConfig::ft()
        }
    }

    pub fn kd_config(seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 3e-3,
            epochs: 3,
            batch_size: 64,
            eval_interval: Some(100),
            seed,
            ..TrainConfig::kd()
        }
    }

    #[derive(Debug, Clone, Copy)]
    pub struct DistillResult {
        pub teacher: f64,
        pub scratch: f64,
        pub kd: f64,
        pub kd_ft: f64,
    }

    /// Scratch FT on `n_labeled` gold examples against KD on `n_soft`
    /// oracle-labeled texts, then KD followed by FT on the same gold set.
    /// All students share one vocab and initialization.
    pub fn distillation(seed: u64, n_labeled: usize, n_soft: usize, n_dev: usize) -> DistillResult {
        let task = SignalTask::new(SignalTaskConfig::default(), seed);
        let labeled = task.labeled(n_labeled, seed * 10 + 1);
        let soft = task.soft_labeled(n_soft, seed * 10 + 2);
        let dev = task.labeled(n_dev, seed * 10 + 3);
        let vocab = vocab_over(&[&soft, &labeled], 2, 20_000, FrequencySource::CorpusAndTrain);
        let teacher = dev
            .iter()
            .filter(|r| {
                let t = r.text.as_deref().unwrap();
                sparse_dan::model::argmax(&task.teacher_probs(t)) == r.label.unwrap()
            })
            .count() as f64
            / dev.len() as f64;
        let train_ex = examples(&vocab, labeled, DataKind::Labeled);
        let soft_ex = examples(&vocab, soft, DataKind::SoftLabels);
        let dev_ex = examples(&vocab, dev, DataKind::Labeled);
        let init = DanModel::new(vocab, small_model(), seed).unwrap();

        let scratch = train(init.clone(), &train_ex, Some(&dev_ex), &ft_config(3e-3, 30, seed)).unwrap();
        let kd = train(init, &soft_ex, Some(&dev_ex), &kd_config(seed)).unwrap();
        let kd_ft = train(kd.model.clone(), &train_ex, Some(&dev_ex), &ft_config(1e-4, 5, seed)).unwrap();
        let acc = |m: &DanModel| evaluate(m, &dev_ex).unwrap().accuracy;
        DistillResult {
            teacher,
            scratch: acc(&scratch.model),
            kd: acc(&kd.model),
            kd_ft: acc(&kd_ft.model),
        }
    }

    #[derive(Debug, Clone)]
    pub struct PruneResult {
        pub base_accuracy: f64,
        pub pruned_accuracy: f64,
        pub identity_max_diff: f64,
        pub base_bytes: usize,
        pub pruned_bytes: usize,
    }

    pub struct PruneFixture {
        pub model: DanModel,
        /// Train-set frequency of every vocab id.
        pub train_freqs: Vec<u64>,
        pub dev: Vec<Numbered>,
    }

    /// Zipfian word frequencies with every signal word among the most
    /// frequent ranks.
    pub fn frequency_aligned() -> SignalTaskConfig {
        SignalTaskConfig {
            zipf: 1.0,
            signal_words: 100,
            signal_rank_limit: 150,
            ..SignalTaskConfig::default()
        }
    }

    /// A KD-trained student on the signal task `config`.
    pub fn prune_fixture(config: SignalTaskConfig, seed: u64) -> PruneFixture {
        let task = SignalTask::new(config, seed);
        let labeled = task.labeled(2000, seed * 10 + 1);
        let soft = task.soft_labeled(20_000, seed * 10 + 2);
        let dev = numbered(task.labeled(2000, seed * 10 + 3));
        let vocab = vocab_over(&[&soft, &labeled], 2, 20_000, FrequencySource::CorpusAndTrain);
        let soft_ex = examples(&vocab, soft, DataKind::SoftLabels);
        let dev_ex = {
            let fz = Featurizer::new(&vocab, None).unwrap();
            to_examples(&dev, &fz, false, DataKind::Labeled, 2).unwrap()
        };
        let init = DanModel::new(vocab, small_model(), seed).unwrap();
        let model = train(init, &soft_ex, Some(&dev_ex), &kd_config(seed)).unwrap().model;
        let train_docs: Vec<&str> = labeled.iter().flat_map(|r| r.texts()).collect();
        let train_freqs = ngram_frequencies(train_docs.iter().copied(), model.vocab());
        PruneFixture { model, train_freqs, dev }
    }

    /// Prunes the fixture model to `keep` of its vocab by train frequencies.
    pub fn pruning(seed: u64, keep: f64) -> PruneResult {
        let PruneFixture { model, train_freqs: freqs, dev: dev_records } = prune_fixture(frequency_aligned(), seed);
        let spec = |k| PruneSpec::new(Keep::Fraction(k), FrequencySource::TrainOnly, freqs.clone());
        let pruned = prune_model(&model, &spec(keep)).unwrap();
        let identity = prune_model(&model, &spec(1.0)).unwrap();

        let mut identity_max_diff: f64 = 0.0;
        let fz_a = Featurizer::new(model.vocab(), None).unwrap();
        let fz_b = Featurizer::new(identity.vocab(), None).unwrap();
        for r in &dev_records {
            let t = r.record.text.as_deref().unwrap();
            let pa = model.predict_proba(sparse_dan::Input::Single(&fz_a.featurize(t).ids)).unwrap();
            let pb = identity.predict_proba(sparse_dan::Input::Single(&fz_b.featurize(t).ids)).unwrap();
            for (a, b) in pa.iter().zip(&pb) {
                identity_max_diff = identity_max_diff.max((a - b).abs());
            }
        }
        PruneResult {
            base_accuracy: evaluate_records(&model, &dev_records, None).unwrap(),
            pruned_accuracy: evaluate_records(&pruned, &dev_records, None).unwrap(),
            identity_max_diff,
            base_bytes: model.to_bytes().len(),
            pruned_bytes: pruned.to_bytes().len(),
        }
    }

    #[derive(Debug, Clone, Copy)]
    pub struct CutoffResult {
        pub base: f64,
        pub cutoff1: f64,
        pub cutoff2: f64,
    }

    /// Order-decided task with unigram and bigram features.
    pub fn cutoff(seed: u64) -> CutoffResult {
        let task = BigramTask::default();
        let train_records = task.labeled(4000, seed * 10 + 1);
        let dev_records = numbered(task.labeled(1000, seed * 10 + 2));
        let vocab = vocab_over(&[&train_records], 2, 20_000, FrequencySource::TrainOnly);
        let train_ex = examples(&vocab, train_records, DataKind::Labeled);
        let init = DanModel::new(vocab, small_model(), seed).unwrap();
        let model = train(init, &train_ex, None, &ft_config(3e-3, 5, seed)).unwrap().model;
        let rows = cutoff_eval(&model, &dev_records, &[1, 2]).unwrap();
        CutoffResult {
            base: evaluate_records(&model, &dev_records, None).unwrap(),
            cutoff1: rows[0].accuracy,
            cutoff2: rows[1].accuracy,
        }
    }

    /// Featurization wall time per document length. Each measurement
    /// featurizes distinct documents totalling the same token count, so the
    /// vocab working set does not shrink for short inputs. Lengths are timed
    /// in shuffled interleaved rounds and each keeps its fastest round, so
    /// slow drift in machine throughput hits every length alike.
    pub fn featurizer_timing(lengths: &[usize], rounds: usize) -> Vec<(f64, f64)> {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        const TOKENS_PER_MEASUREMENT: usize = 25_600;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let word = |r: &mut rand_chacha::ChaCha8Rng| format!("w{}", r.gen_range(0..500));
        let doc = |r: &mut rand_chacha::ChaCha8Rng, n: usize| (0..n).map(|_| word(r)).collect::<Vec<_>>().join(" ");
        let corpus: Vec<String> = (0..400).map(|_| doc(&mut r, 50)).collect();
        let vocab = build_vocab(&corpus, &VocabConfig::new(1, 4, 50_000)).unwrap();
        let fz = Featurizer::new(&vocab, None).unwrap();
        let pools: Vec<Vec<String>> = lengths
            .iter()
            .map(|&n| (0..(TOKENS_PER_MEASUREMENT / n).max(1)).map(|_| doc(&mut r, n)).collect())
            .collect();
        let mut scratch = String::new();
        let mut best = vec![f64::INFINITY; lengths.len()];
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        for _ in 0..rounds {
            order.shuffle(&mut r);
            for &i in &order {
                let t = Instant::now();
                for d in &pools[i] {
                    std::hint::black_box(fz.featurize_with(std::hint::black_box(d), &mut scratch));
                }
                best[i] = best[i].min(t.elapsed().as_secs_f64() / pools[i].len() as f64);
            }
        }
        lengths.iter().map(|&n| n as f64).zip(best).collect()
    }
}

//! Coverage-vs-loss bucketing, `(|V|, d_e)` budget sweeps and inference
//! throughput benchmarks.

use std::hint::black_box;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::Numbered;
use crate::error::{Error, Result};
use crate::featurize::{Example, Featurizer};
use crate::model::{DanModel, Input, Real};
use crate::optim::{evaluate, ft_loss};
use crate::pipeline::{dev_examples, train_student, PipelineConfig, PipelineData};
use crate::vocab::{build_vocab_with_stats, NgramVocab, VocabConfig};

pub const COVERAGE_BUCKETS: usize = 10;

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Decile of `matched / total`, with a full match in the top bucket.
pub fn coverage_bucket(matched: usize, total: usize) -> Option<usize> {
    (total > 0).then(|| (COVERAGE_BUCKETS * matched / total).min(COVERAGE_BUCKETS - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageBucket {
    /// Inclusive lower bound.
    pub lo: f64,
    /// Exclusive upper bound, except the last bucket which includes 1.0.
    pub hi: f64,
    pub count: usize,
    pub median_loss: Option<f64>,
    pub q1_loss: Option<f64>,
    pub q3_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub buckets: Vec<CoverageBucket>,
    /// Examples with no n-grams at all, whose coverage is undefined.
    pub undefined_count: usize,
}

impl CoverageReport {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum::<usize>() + self.undefined_count
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("lo,hi,count,median_loss,q1_loss,q3_loss\n");
        for b in &self.buckets {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.lo,
                b.hi,
                b.count,
                opt(b.median_loss),
                opt(b.q1_loss),
                opt(b.q3_loss)
            ));
        }
        out
    }
}

/// Cross-entropy against the gold label, bucketed by n-gram coverage.
pub fn coverage_vs_loss(model: &DanModel, dev: &[Example]) -> Result<CoverageReport> {
    let mut losses = vec![Vec::new(); COVERAGE_BUCKETS];
    let mut undefined_count = 0;
    for (i, ex) in dev.iter().enumerate() {
        let label = ex.label().ok_or_else(|| Error::DataValidation {
            line: i + 1,
            message: "coverage analysis needs gold labels".into(),
        })?;
        let (matched, total) = ex.coverage_counts();
        match coverage_bucket(matched, total) {
            None => undefined_count += 1,
            Some(b) => losses[b].push(ft_loss(label, &model.predict_proba(ex.input())?)?),
        }
    }
    let buckets = losses
        .into_iter()
        .enumerate()
        .map(|(b, mut l)| {
            l.sort_by(f64::total_cmp);
            CoverageBucket {
                lo: b as f64 / COVERAGE_BUCKETS as f64,
                hi: (b + 1) as f64 / COVERAGE_BUCKETS as f64,
                count: l.len(),
                median_loss: quantile(&l, 0.5),
                q1_loss: quantile(&l, 0.25),
                q3_loss: quantile(&l, 0.75),
            }
        })
        .collect();
    Ok(CoverageReport {
        buckets,
        undefined_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Vocabulary actually built; smaller than requested on small corpora.
    pub actual_vocab: usize,
    pub total_params: Option<u64>,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

pub fn budget_csv(rows: &[BudgetRow]) -> String {
    let opt = |x: Option<String>| x.unwrap_or_default();
    let mut out = String::from("vocab_size,embed_dim,actual_vocab,total_params,accuracy,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.vocab_size,
            r.embed_dim,
            r.actual_vocab,
            opt(r.total_params.map(|p| p.to_string())),
            opt(r.accuracy.map(|a| a.to_string())),
            opt(r.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
        ));
    }
    out
}

/// Trains one student per grid point of `config` under its stage recipe
/// and reports dev accuracy. A failing point is recorded and the sweep
/// moves on.
pub fn budget_sweep(config: &PipelineConfig, data: &PipelineData) -> Result<Vec<BudgetRow>> {
    if config.grid.is_empty() {
        return Err(Error::config("budget sweep needs at least one grid point"));
    }
    if data.dev.is_empty() {
        return Err(Error::config("budget sweep needs a dev set"));
    }
    let largest = config.grid.iter().map(|g| g.vocab_size).max().unwrap_or(1).max(1);
    let docs = data.frequency_documents(config.vocab.source, config.privacy_mode());
    // Top-k under a total order is a prefix of top-(k+1), so one count
    // serves every grid point.
    let vocab_cfg = VocabConfig {
        top_k: largest,
        ..config.vocab.clone()
    };
    let (full, _) = build_vocab_with_stats(docs.iter().copied(), &vocab_cfg)?;
    let entries: Vec<(String, u64)> = full.entries().map(|(g, f)| (g.to_owned(), f)).collect();

    let rows = config
        .grid
        .iter()
        .map(|point| {
            let actual = point.vocab_size.min(entries.len());
            let run = || -> Result<(u64, f64)> {
                if point.vocab_size == 0 {
                    return Err(Error::config("vocab_size must be positive"));
                }
                let vocab = NgramVocab::from_ranked(entries[..actual].to_vec(), full.n_range(), full.source())?;
                let mut cfg = config.clone();
                cfg.model.embed_dim = point.embed_dim;
                let (_, outcome) = train_student(Arc::new(vocab), &cfg, data)?;
                let dev = dev_examples(&outcome.model, &data.dev)?;
                Ok((outcome.model.param_count().total, evaluate(&outcome.model, &dev)?.accuracy))
            };
            match run() {
                Ok((params, acc)) => BudgetRow {
                    vocab_size: point.vocab_size,
                    embed_dim: point.embed_dim,
                    actual_vocab: actual,
                    total_params: Some(params),
                    accuracy: Some(acc),
                    error: None,
                },
                Err(e) => {
                    log::warn!("grid point {point:?} failed: {e}");
                    BudgetRow {
                        vocab_size: point.vocab_size,
                        embed_dim: point.embed_dim,
                        actual_vocab: actual,
                        total_params: None,
                        accuracy: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Fp32,
    #[default]
    Fp64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(Precision::Fp32),
            "fp64" => Ok(Precision::Fp64),
            other => Err(Error::config(format!("unsupported precision {other:?}, expected fp32 or fp64"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Time featurization from raw text as part of each batch.
    pub include_featurize: bool,
    pub precision: Precision,
    /// Threads each running their own batches; throughput is aggregate.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 32,
            warmup: 5,
            iters: 50,
            include_featurize: false,
            precision: Precision::Fp64,
            workers: 1,
        }
    }
}

pub const MIN_MEASURED_BATCHES: usize = 10;

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.workers == 0 {
            return Err(Error::config("batch size and workers must be positive"));
        }
        if self.iters < MIN_MEASURED_BATCHES {
            return Err(Error::config(format!(
                "at least {MIN_MEASURED_BATCHES} measured batches are required, got {}",
                self.iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyMs {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples_per_second: f64,
    pub batch_size: usize,
    pub precision: Precision,
    pub include_featurize: bool,
    pub workers: usize,
    pub warmup_batches: usize,
    /// Per worker.
    pub measured_batches: usize,
    /// Per-batch wall time.
    pub latency_ms: LatencyMs,
    pub device_note: String,
}

fn device_note() -> String {
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    format!(
        "{} {} cpu, {cores} logical cores, {} build",
        std::env::consts::OS,
        std::env::consts::ARCH,
        if cfg!(debug_assertions) { "debug" } else { "release" }
    )
}

enum Prepared {
    Raw(Vec<Numbered>),
    Featurized(Vec<Example>),
}

fn run_batches<T: Real>(
    model: &DanModel<T>,
    data: &Prepared,
    config: &BenchConfig,
    start: usize,
) -> Result<Vec<Duration>> {
    let fz = Featurizer::new(model.vocab(), None)?;
    let len = match data {
        Prepared::Raw(r) => r.len(),
        Prepared::Featurized(e) => e.len(),
    };
    let mut scratch = String::new();
    let mut times = Vec::with_capacity(config.iters);
    let mut cursor = start % len;
    for round in 0..config.warmup + config.iters {
        let t0 = Instant::now();
        for _ in 0..config.batch_size {
            let probs = match data {
                Prepared::Featurized(ex) => model.predict_proba(ex[cursor].input())?,
                Prepared::Raw(recs) => {
                    let r = &recs[cursor].record;
                    match (&r.text, &r.text1, &r.text2) {
                        (_, Some(a), Some(b)) if model.config().pair_mode => {
                            let left = fz.featurize_with(a, &mut scratch);
                            let right = fz.featurize_with(b, &mut scratch);
                            model.predict_proba(Input::Pair(&left.ids, &right.ids))?
                        }
                        (Some(t), _, _) if !model.config().pair_mode => {
                            let ex = fz.featurize_with(t, &mut scratch);
                            model.predict_proba(Input::Single(&ex.ids))?
                        }
                        _ => {
                            return Err(Error::DataValidation {
                                line: recs[cursor].line,
                                message: "record kind does not match the model's pair mode".into(),
                            })
                        }
                    }
                }
            };
            black_box(probs);
            cursor = (cursor + 1) % len;
        }
        if round >= config.warmup {
            times.push(t0.elapsed());
        }
    }
    Ok(times)
}

fn bench_typed<T: Real>(model: &DanModel<T>, data: &Prepared, config: &BenchConfig) -> Result<(Duration, Vec<Duration>)> {
    let t0 = Instant::now();
    let mut per_worker = Vec::with_capacity(config.workers);
    if config.workers == 1 {
        per_worker.push(run_batches(model, data, config, 0));
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..config.workers)
                .map(|w| s.spawn(move || run_batches(model, data, config, w * config.batch_size)))
                .collect();
            for h in handles {
                per_worker.push(h.join().expect("bench worker panicked"));
            }
        });
    }
    let wall = t0.elapsed();
    let mut all = Vec::new();
    for times in per_worker {
        all.extend(times?);
    }
    Ok((wall, all))
}

/// Steady-state throughput of `model` over `dataset`, cycling through it in
/// batches. Model loading is never timed; softmax always is. Without
/// `include_featurize` the dataset is featurized before the clock starts.
pub fn bench_inference(model: &DanModel, dataset: &[Numbered], config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    if dataset.len() < config.batch_size {
        return Err(Error::Bench(format!(
            "dataset has {} examples, fewer than one batch of {}",
            dataset.len(),
            config.batch_size
        )));
    }
    let prepared = if config.include_featurize {
        Prepared::Raw(dataset.to_vec())
    } else {
        let fz = Featurizer::new(model.vocab(), None)?;
        Prepared::Featurized(crate::dataset::to_examples(
            dataset,
            &fz,
            model.config().pair_mode,
            crate::dataset::DataKind::Any,
            model.n_classes(),
        )?)
    };
    let (wall, mut times) = match config.precision {
        Precision::Fp64 => bench_typed(model, &prepared, config)?,
        Precision::Fp32 => bench_typed(&model.cast::<f32>(), &prepared, config)?,
    };
    // Warmup batches run before measurement in every worker; the measured
    // share of the wall clock is approximated by the measured batch time.
    let measured: Duration = if config.workers == 1 {
        times.iter().sum()
    } else {
        let frac = config.iters as f64 / (config.iters + config.warmup) as f64;
        wall.mul_f64(frac)
    };
    let samples = (config.iters * config.batch_size * config.workers) as f64;
    let secs = measured.as_secs_f64().max(f64::MIN_POSITIVE);
    times.sort();
    let ms: Vec<f64> = times.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    let q = |p| quantile(&ms, p).unwrap_or(0.0);
    Ok(BenchReport {
        samples_per_second: samples / secs,
        batch_size: config.batch_size,
        precision: config.precision,
        include_featurize: config.include_featurize,
        workers: config.workers,
        warmup_batches: config.warmup,
        measured_batches: config.iters,
        latency_ms: LatencyMs {
            mean: ms.iter().sum::<f64>() / ms.len() as f64,
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            max: ms.last().copied().unwrap_or(0.0),
        },
        device_note: device_note(),
    })
}

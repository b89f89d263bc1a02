//! End-to-end student pipeline: vocabulary, distillation, fine-tuning and
//! optional pruning and benchmarking, driven by one TOML config.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! corpus = "corpus.txt"
//! train = "train.jsonl"
//! dev = "dev.jsonl"
//! soft_labels = "teacher.jsonl"
//! out_dir = "out"
//!
//! [vocab]
//! n_min = 1
//! n_max = 4
//! top_k = 20000
//!
//! [model]
//! embed_dim = 64
//! hidden = [64]
//!
//! [stages]
//! kd = true
//! ft = true
//! ```
//!
//! Relative paths resolve against the directory of the config file. With
//! `kd = true, ft = false` the pipeline never opens the train file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{bench_inference, BenchConfig, BenchReport};
use crate::dataset::{read_documents, read_records, to_examples, DataKind, Numbered};
use crate::error::{Error, Result};
use crate::featurize::{Example, Featurizer};
use crate::model::{DanModel, ModelConfig};
use crate::optim::{evaluate, metrics_csv, train, LossMode, TrainConfig, TrainOutcome};
use crate::prune::{prune_model, Keep, PruneSpec};
use crate::vocab::{build_vocab_with_stats, ngram_frequencies, FrequencySource, NgramVocab, VocabConfig};

/// Offsets added to the top-level seed for each stage.
pub const INIT_SEED_OFFSET: u64 = 1;
pub const KD_SEED_OFFSET: u64 = 2;
pub const FT_SEED_OFFSET: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Unlabeled corpus, one document per line or JSONL.
    pub corpus: Option<PathBuf>,
    /// Labeled training set.
    pub train: Option<PathBuf>,
    /// Labeled dev set used for checkpoint selection and reports.
    pub dev: Option<PathBuf>,
    /// Teacher soft labels for the distillation stage.
    pub soft_labels: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            train: None,
            dev: None,
            soft_labels: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub kd: bool,
    pub ft: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages { kd: true, ft: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneStage {
    /// Fraction of the vocabulary to keep.
    pub keep: f64,
    #[serde(default)]
    pub source: FrequencySource,
}

/// One `(|V|, d_e)` point of a budget sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub vocab_size: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub kd: TrainConfig,
    pub ft: TrainConfig,
    pub stages: Stages,
    pub prune: Option<PruneStage>,
    pub bench: Option<BenchConfig>,
    /// Points for `sweep`; ignored by the pipeline itself.
    pub grid: Vec<GridPoint>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            kd: TrainConfig::kd(),
            ft: TrainConfig::ft(),
            stages: Stages::default(),
            prune: None,
            bench: None,
            grid: Vec::new(),
        }
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: toml::Table) -> Result<T> {
    let mut merged = toml::Table::try_from(base).map_err(|e| Error::config(e.to_string()))?;
    merged.extend(table);
    merged.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))
}

impl PipelineConfig {
    /// Parses a config. Missing `[kd]` and `[ft]` keys take the defaults of
    /// their own stage.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let mut section = |key: &str| -> Result<toml::Table> {
            match table.remove(key) {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t),
                Some(_) => Err(Error::config(format!("[{key}] must be a table"))),
            }
        };
        let kd = section("kd")?;
        let ft = section("ft")?;
        let mut config: PipelineConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        config.kd = overlay(&TrainConfig::kd(), kd)?;
        config.ft = overlay(&TrainConfig::ft(), ft)?;
        Ok(config)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_toml_str(&fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.corpus, &mut paths.train, &mut paths.dev, &mut paths.soft_labels]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut paths.out_dir);
    }

    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    /// Distillation without the task training set.
    pub fn privacy_mode(&self) -> bool {
        self.stages.kd && !self.stages.ft
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        self.model.validate()?;
        let need = |p: &Option<PathBuf>, key: &str, why: &str| {
            if p.is_none() {
                Err(Error::config(format!("paths.{key} is required {why}")))
            } else {
                Ok(())
            }
        };
        if !self.stages.kd && !self.stages.ft {
            return Err(Error::config("at least one of stages.kd and stages.ft must be enabled"));
        }
        if self.stages.kd {
            self.kd.validate()?;
            need(&self.paths.soft_labels, "soft_labels", "when the kd stage is enabled")?;
            if self.kd.mode != LossMode::Kd {
                return Err(Error::config("kd.mode must be \"kd\""));
            }
        }
        if self.stages.ft {
            self.ft.validate()?;
            need(&self.paths.train, "train", "when the ft stage is enabled")?;
            if self.ft.mode != LossMode::Ft {
                return Err(Error::config("ft.mode must be \"ft\""));
            }
        }
        if self.privacy_mode() {
            if self.vocab.source == FrequencySource::TrainOnly {
                return Err(Error::config(
                    "kd-only mode never reads the train set; set vocab.source = \"corpus_and_train\"",
                ));
            }
            if self.prune.is_some_and(|p| p.source == FrequencySource::TrainOnly) {
                return Err(Error::config(
                    "kd-only mode never reads the train set; set prune.source = \"corpus_and_train\"",
                ));
            }
        } else {
            let train_needed = self.vocab.source == FrequencySource::TrainOnly
                || self.prune.is_some_and(|p| p.source == FrequencySource::TrainOnly);
            if train_needed {
                need(&self.paths.train, "train", "for train-only frequencies")?;
            }
        }
        if let Some(p) = &self.prune {
            PruneSpec::new(Keep::Fraction(p.keep), p.source, Vec::new()).keep_count(usize::MAX / 2)?;
        }
        if let Some(b) = &self.bench {
            b.validate()?;
            need(&self.paths.dev, "dev", "to benchmark")?;
        }
        Ok(())
    }

    /// Files the pipeline writes, given its enabled stages.
    pub fn outputs(&self) -> Vec<PathBuf> {
        let dir = &self.paths.out_dir;
        let mut out = vec![dir.join("vocab.bin")];
        if self.stages.kd {
            out.push(dir.join("student.bin"));
            out.push(dir.join("kd_metrics.csv"));
        }
        if self.stages.ft {
            out.push(dir.join("student_ft.bin"));
            out.push(dir.join("ft_metrics.csv"));
        }
        if self.prune.is_some() {
            out.push(dir.join("student_pruned.bin"));
        }
        if self.bench.is_some() {
            out.push(dir.join("bench.json"));
        }
        out.push(dir.join("report.json"));
        out
    }
}

/// Every input the pipeline reads, loaded up front.
#[derive(Debug, Clone, Default)]
pub struct PipelineData {
    pub corpus: Vec<String>,
    pub train: Vec<Numbered>,
    pub dev: Vec<Numbered>,
    pub soft_labels: Vec<Numbered>,
    pub files_read: Vec<PathBuf>,
}

impl PipelineData {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let mut data = PipelineData::default();
        let privacy = config.privacy_mode();
        let wants = |s: FrequencySource| {
            config.vocab.source == s || config.prune.is_some_and(|p| p.source == s)
        };
        if let Some(p) = &config.paths.corpus {
            if wants(FrequencySource::CorpusAndTrain) {
                data.corpus = read_documents(p)?;
                data.files_read.push(p.clone());
            }
        }
        if !privacy {
            if let Some(p) = &config.paths.train {
                data.train = read_records(p)?;
                data.files_read.push(p.clone());
            }
        }
        if let Some(p) = &config.paths.dev {
            data.dev = read_records(p)?;
            data.files_read.push(p.clone());
        }
        if config.stages.kd {
            if let Some(p) = &config.paths.soft_labels {
                data.soft_labels = read_records(p)?;
                data.files_read.push(p.clone());
            }
        }
        Ok(data)
    }

    fn texts(records: &[Numbered]) -> impl Iterator<Item = &str> {
        records.iter().flat_map(|n| n.record.texts())
    }

    /// Documents whose n-gram counts back `source`. In kd-only mode the
    /// soft-label texts stand in for the corpus when no corpus file is
    /// given, and the train set is never consulted.
    pub fn frequency_documents(&self, source: FrequencySource, privacy: bool) -> Vec<&str> {
        let train = Self::texts(&self.train);
        match source {
            FrequencySource::TrainOnly => train.collect(),
            FrequencySource::CorpusAndTrain => {
                let corpus: Vec<&str> = if self.corpus.is_empty() && privacy {
                    Self::texts(&self.soft_labels).collect()
                } else {
                    self.corpus.iter().map(String::as_str).collect()
                };
                corpus.into_iter().chain(train).collect()
            }
        }
    }
}

/// Featurizes `records` under `model`'s vocab and runs one stage.
pub fn train_stage(
    model: DanModel,
    records: &[Numbered],
    dev: Option<&[Example]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let kind = match config.mode {
        LossMode::Kd => DataKind::SoftLabels,
        LossMode::Ft => DataKind::Labeled,
    };
    let examples = {
        let fz = Featurizer::new(model.vocab(), None)?;
        to_examples(records, &fz, model.config().pair_mode, kind, model.n_classes())?
    };
    train(model, &examples, dev, config)
}

pub fn dev_examples(model: &DanModel, dev: &[Numbered]) -> Result<Vec<Example>> {
    let fz = Featurizer::new(model.vocab(), None)?;
    to_examples(dev, &fz, model.config().pair_mode, DataKind::Labeled, model.n_classes())
}

/// Trains one student on already loaded data: init, then the enabled
/// stages. Returns the post-KD model (if run) and the final model.
pub fn train_student(
    vocab: Arc<NgramVocab>,
    config: &PipelineConfig,
    data: &PipelineData,
) -> Result<(Option<TrainOutcome>, TrainOutcome)> {
    let mut model = DanModel::new(vocab, config.model.clone(), config.stage_seed(INIT_SEED_OFFSET))?;
    let dev = if data.dev.is_empty() {
        None
    } else {
        Some(dev_examples(&model, &data.dev)?)
    };
    let mut kd_outcome = None;
    if config.stages.kd {
        let cfg = TrainConfig {
            seed: config.stage_seed(KD_SEED_OFFSET),
            ..config.kd.clone()
        };
        let out = train_stage(model, &data.soft_labels, dev.as_deref(), &cfg)?;
        model = out.model.clone();
        kd_outcome = Some(out);
    }
    if config.stages.ft {
        let cfg = TrainConfig {
            seed: config.stage_seed(FT_SEED_OFFSET),
            ..config.ft.clone()
        };
        let out = train_stage(model, &data.train, dev.as_deref(), &cfg)?;
        return Ok((kd_outcome, out));
    }
    let last = kd_outcome.clone().expect("validated: some stage enabled");
    Ok((kd_outcome, last))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub model_path: PathBuf,
    pub steps: usize,
    pub best_step: Option<usize>,
    pub dev_accuracy: Option<f64>,
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub vocab_size: usize,
    pub total_params: u64,
    pub kd: Option<StageReport>,
    pub ft: Option<StageReport>,
    pub pruned: Option<StageReport>,
    pub bench: Option<BenchReport>,
    /// Every input file opened, in order.
    pub files_read: Vec<PathBuf>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn stage_report(model: &DanModel, path: PathBuf, outcome: Option<&TrainOutcome>, dev: Option<&[Example]>) -> Result<StageReport> {
    let eval = dev.map(|d| evaluate(model, d)).transpose()?;
    Ok(StageReport {
        model_path: path,
        steps: outcome.map_or(0, |o| o.steps),
        best_step: outcome.and_then(|o| o.best_step),
        dev_accuracy: eval.map(|e| e.accuracy),
        dev_loss: eval.map(|e| e.loss),
    })
}

/// Runs the configured stages, writing each stage's artifacts as soon as
/// it finishes so a later failure leaves earlier outputs in place.
pub fn run_pipeline(config: &PipelineConfig, overwrite: bool) -> Result<PipelineReport> {
    config.validate()?;
    let outputs = config.outputs();
    if !overwrite {
        if let Some(existing) = outputs.iter().find(|p| p.exists()) {
            return Err(Error::config(format!(
                "{} already exists; pass --overwrite to replace pipeline outputs",
                existing.display()
            )));
        }
    }
    let dir = &config.paths.out_dir;
    fs::create_dir_all(dir)?;
    let data = PipelineData::load(config)?;
    let privacy = config.privacy_mode();

    let docs = data.frequency_documents(config.vocab.source, privacy);
    let (vocab, stats) = build_vocab_with_stats(docs.iter().copied(), &config.vocab)?;
    log::info!(
        "vocab: {} entries from {} documents, {} tokens",
        vocab.len(),
        stats.document_count,
        stats.token_count
    );
    vocab.save(dir.join("vocab.bin"))?;
    let vocab = Arc::new(vocab);

    let mut model = DanModel::new(vocab, config.model.clone(), config.stage_seed(INIT_SEED_OFFSET))?;
    let dev = if data.dev.is_empty() {
        None
    } else {
        Some(dev_examples(&model, &data.dev)?)
    };
    let mut report = PipelineReport {
        vocab_size: model.vocab().len(),
        total_params: model.param_count().total,
        kd: None,
        ft: None,
        pruned: None,
        bench: None,
        files_read: data.files_read.clone(),
    };

    if config.stages.kd {
        let cfg = TrainConfig {
            seed: config.stage_seed(KD_SEED_OFFSET),
            ..config.kd.clone()
        };
        let out = train_stage(model, &data.soft_labels, dev.as_deref(), &cfg)?;
        let path = dir.join("student.bin");
        out.model.save(&path)?;
        write_file(&dir.join("kd_metrics.csv"), metrics_csv(&out.metrics))?;
        report.kd = Some(stage_report(&out.model, path, Some(&out), dev.as_deref())?);
        model = out.model;
    }
    if config.stages.ft {
        let cfg = TrainConfig {
            seed: config.stage_seed(FT_SEED_OFFSET),
            ..config.ft.clone()
        };
        let out = train_stage(model, &data.train, dev.as_deref(), &cfg)?;
        let path = dir.join("student_ft.bin");
        out.model.save(&path)?;
        write_file(&dir.join("ft_metrics.csv"), metrics_csv(&out.metrics))?;
        report.ft = Some(stage_report(&out.model, path, Some(&out), dev.as_deref())?);
        model = out.model;
    }
    if let Some(p) = &config.prune {
        let docs = data.frequency_documents(p.source, privacy);
        let freqs = ngram_frequencies(docs.iter().copied(), model.vocab());
        let pruned = prune_model(&model, &PruneSpec::new(Keep::Fraction(p.keep), p.source, freqs))?;
        let path = dir.join("student_pruned.bin");
        pruned.save(&path)?;
        let pruned_dev = dev_examples(&pruned, &data.dev)?;
        let dev_ref = (!data.dev.is_empty()).then_some(pruned_dev.as_slice());
        report.pruned = Some(stage_report(&pruned, path, None, dev_ref)?);
    }
    if let Some(b) = &config.bench {
        let bench = bench_inference(&model, &data.dev, b)?;
        write_file(
            &dir.join("bench.json"),
            serde_json::to_string_pretty(&bench).map_err(std::io::Error::from)?,
        )?;
        report.bench = Some(bench);
    }
    write_file(
        &dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?,
    )?;
    Ok(report)
}

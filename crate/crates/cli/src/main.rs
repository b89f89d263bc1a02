use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sparse_dan::analysis::{self, BenchConfig, Precision};
use sparse_dan::dataset::{self, DataKind, Numbered};
use sparse_dan::featurize::Featurizer;
use sparse_dan::model::{argmax, model_file_width};
use sparse_dan::optim::{metrics_csv, TrainConfig};
use sparse_dan::pipeline::{self, PipelineConfig, PipelineData};
use sparse_dan::prune::{self, Keep, PruneSpec};
use sparse_dan::synth::{BigramTask, SignalTask, SignalTaskConfig};
use sparse_dan::vocab::{build_vocab_parallel, ngram_frequencies};
use sparse_dan::{DanModel, FrequencySource, ModelConfig, NgramVocab, Pooling, TieBreak, VocabConfig};

#[derive(Parser)]
#[command(name = "sdan", version, about = "Sparse n-gram DAN students: vocab, distill, fine-tune, prune, bench")]
struct Cli {
    /// Print reports as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for parallel stages. Defaults to all cores.
    #[arg(long, global = true, env = "SDAN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or inspect an n-gram vocabulary.
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Map text to n-gram ids and coverage statistics.
    Featurize(FeaturizeArgs),
    /// Train a student by distillation or fine-tuning.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Class probabilities for every record of a dataset.
    Predict(PredictArgs),
    /// Keep only the most frequent n-grams of a model.
    Prune(PruneArgs),
    /// Dev accuracy with longer n-grams ignored.
    CutoffEval(CutoffArgs),
    /// Accuracy broken down by n-gram coverage.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Inference throughput.
    Bench(BenchArgs),
    /// Train one student per (|V|, d_e) grid point.
    Sweep(SweepArgs),
    /// Schema-check a JSONL dataset.
    Validate(ValidateArgs),
    /// Run vocab, KD, FT and the optional prune and bench stages.
    Pipeline(PipelineArgs),
    /// Write a synthetic dataset with a known labeling rule.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum VocabCmd {
    Build(VocabBuildArgs),
    Stats {
        #[arg(long)]
        vocab: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Train,
    CorpusAndTrain,
}

impl From<SourceArg> for FrequencySource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Train => FrequencySource::TrainOnly,
            SourceArg::CorpusAndTrain => FrequencySource::CorpusAndTrain,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Lex,
    ReverseLex,
}

#[derive(Args)]
struct VocabBuildArgs {
    /// Text files (one document per line) or JSONL datasets.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    nmin: usize,
    #[arg(long, default_value_t = 4)]
    nmax: usize,
    #[arg(long, default_value_t = 1_000_000)]
    topk: usize,
    #[arg(long, value_enum, default_value_t = TieBreakArg::Lex)]
    tiebreak: TieBreakArg,
    /// Which documents the inputs represent; stored in the vocab file.
    #[arg(long, value_enum, default_value_t = SourceArg::Train)]
    source: SourceArg,
    /// Spill counts to disk beyond this many distinct n-grams.
    #[arg(long)]
    spill_threshold: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ncutoff: Option<usize>,
    /// JSONL of ids and coverage counts per record.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-record coverage CSV.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Comma-separated hidden widths, e.g. 1000 or 1000,256.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    pair: bool,
    #[arg(long)]
    attention_dim: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, mut c: ModelConfig) -> ModelConfig {
        if let Some(v) = self.embed_dim {
            c.embed_dim = v;
        }
        if let Some(v) = &self.hidden {
            c.hidden = v.clone();
        }
        if let Some(v) = self.n_classes {
            c.n_classes = v;
        }
        if let Some(v) = self.pooling {
            c.pooling = v;
        }
        if self.pair {
            c.pair_mode = true;
        }
        if let Some(v) = self.attention_dim {
            c.attention_dim = v;
        }
        c
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Pipeline-style TOML supplying [model] and the stage's section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vocabulary for a fresh model.
    #[arg(long, required_unless_present = "init")]
    vocab: Option<PathBuf>,
    /// Continue from an existing model instead of a fresh one.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-evaluation metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Compute gradients on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Distill teacher soft labels.
    Kd {
        #[arg(long)]
        soft_labels: PathBuf,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Fine-tune on gold labels.
    Ft {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        args: TrainArgs,
    },
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ncutoff: Option<usize>,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreqSourceArg {
    Train,
    CorpusAndTrain,
    /// Frequencies stored in the model's vocabulary.
    Vocab,
}

#[derive(Args)]
struct FreqArgs {
    #[arg(long, value_enum, default_value_t = FreqSourceArg::Train)]
    freq_source: FreqSourceArg,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct PruneArgs {
    #[command(subcommand)]
    sweep: Option<PruneCmd>,
    #[arg(long, required = true)]
    model: Option<PathBuf>,
    #[command(flatten)]
    freq: FreqArgs,
    /// Fraction of the vocabulary to keep, in (0, 1].
    #[arg(long, conflicts_with = "count", required_unless_present = "count")]
    keep: Option<f64>,
    /// Number of n-grams to keep.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, required = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PruneCmd {
    /// Prune to several fractions and evaluate each on dev.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        freq: FreqArgs,
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.5,0.1,0.03")]
        fractions: Vec<f64>,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CutoffArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    cutoffs: Vec<usize>,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Loss by n-gram coverage decile.
    Coverage {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        ncutoff: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long)]
    include_featurize: bool,
    #[arg(long, default_value = "fp64")]
    precision: Precision,
    /// Concurrent benchmark threads; throughput is aggregate.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write the report as JSON to this file.
    #[arg(long = "json-out", alias = "report")]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Pipeline config with a [[grid]] list of vocab_size/embed_dim points.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Labeled,
    Soft,
    Any,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Any)]
    kind: KindArg,
    #[arg(long)]
    n_classes: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replace existing outputs.
    #[arg(long)]
    overwrite: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    /// Label is the sign of a weighted count of signal words.
    Signal,
    /// Label is the order of one word pair.
    Bigram,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthOutput {
    Labeled,
    /// Oracle-teacher probabilities, no labels.
    Soft,
    /// Raw text, one document per line.
    Text,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Signal)]
    task: TaskArg,
    #[arg(long, value_enum, default_value_t = SynthOutput::Labeled)]
    output: SynthOutput,
    #[arg(long)]
    n: usize,
    /// Seed of the labeling rule; keep it fixed across splits.
    #[arg(long, default_value_t = 0)]
    task_seed: u64,
    /// Seed of the sampled documents; vary it across splits.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Vocab(VocabCmd::Build(a)) => vocab_build(cli, a),
        Command::Vocab(VocabCmd::Stats { vocab }) => vocab_stats(cli, vocab),
        Command::Featurize(a) => featurize(cli, a),
        Command::Train(t) => train(cli, t),
        Command::Predict(a) => predict(a),
        Command::Prune(a) => match &a.sweep {
            Some(PruneCmd::Sweep {
                model,
                freq,
                fractions,
                dev,
                csv,
            }) => prune_sweep(cli, model, freq, fractions, dev, csv.as_deref()),
            None => prune_one(cli, a),
        },
        Command::CutoffEval(a) => cutoff_eval(cli, a),
        Command::Analyze(AnalyzeCmd::Coverage {
            model,
            dev,
            ncutoff,
            csv,
        }) => coverage(cli, model, dev, *ncutoff, csv.as_deref()),
        Command::Bench(a) => bench(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Validate(a) => validate(cli, a),
        Command::Pipeline(a) => run_pipeline(cli, a),
        Command::Synth(a) => synth(a),
    }
}

fn emit(cli: &Cli, value: &serde_json::Value, human: impl FnOnce() -> String) {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(value).expect("json value"));
    } else {
        print!("{}", human());
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<DanModel> {
    let width = model_file_width(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match width {
        8 => DanModel::<f64>::load(path)?,
        _ => DanModel::<f32>::load(path)?.cast(),
    })
}

fn read_records(path: &Path) -> Result<Vec<Numbered>> {
    dataset::read_records(path).with_context(|| format!("reading {}", path.display()))
}

fn workers() -> usize {
    rayon::current_num_threads()
}

fn vocab_build(cli: &Cli, a: &VocabBuildArgs) -> Result<ExitCode> {
    let mut docs = Vec::new();
    for p in &a.input {
        docs.extend(dataset::read_documents(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let config = VocabConfig {
        n_min: a.nmin,
        n_max: a.nmax,
        top_k: a.topk,
        tiebreak: match a.tiebreak {
            TieBreakArg::Lex => TieBreak::Lexicographic,
            TieBreakArg::ReverseLex => TieBreak::ReverseLexicographic,
        },
        source: a.source.into(),
        spill_threshold: a.spill_threshold,
    };
    let (vocab, stats) = build_vocab_parallel(&docs, &config, workers())?;
    vocab.save(&a.out)?;
    emit(
        cli,
        &json!({ "vocab_size": vocab.len(), "out": a.out, "stats": stats }),
        || {
            let mut s = format!(
                "{} n-grams from {} documents ({} tokens) -> {}\n",
                vocab.len(),
                stats.document_count,
                stats.token_count,
                a.out.display()
            );
            for (n, c) in &stats.distinct_ngrams_per_order {
                s.push_str(&format!("  distinct {n}-grams: {c}\n"));
            }
            s
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn vocab_stats(cli: &Cli, path: &Path) -> Result<ExitCode> {
    let vocab = NgramVocab::load(path).with_context(|| format!("reading {}", path.display()))?;
    let (n_min, n_max) = vocab.n_range();
    let per_order: Vec<(usize, usize)> = (n_min..=n_max)
        .map(|n| (n, vocab.effective_size(n) - if n > n_min { vocab.effective_size(n - 1) } else { 0 }))
        .collect();
    let freqs = vocab.frequencies();
    let value = json!({
        "size": vocab.len(),
        "n_range": [n_min, n_max],
        "source": vocab.source(),
        "entries_per_order": per_order.iter().map(|(n, c)| (n.to_string(), json!(c))).collect::<serde_json::Map<_, _>>(),
        "max_frequency": freqs.first(),
        "min_frequency": freqs.last(),
    });
    emit(cli, &value, || {
        let mut s = format!(
            "{} entries, n-gram range ({n_min}, {n_max}), source {:?}\n",
            vocab.len(),
            vocab.source()
        );
        for (n, c) in &per_order {
            s.push_str(&format!("  {n}-grams: {c}\n"));
        }
        if let (Some(hi), Some(lo)) = (freqs.first(), freqs.last()) {
            s.push_str(&format!("  frequency range: {lo}..={hi}\n"));
        }
        s
    });
    Ok(ExitCode::SUCCESS)
}

fn featurize(cli: &Cli, a: &FeaturizeArgs) -> Result<ExitCode> {
    let vocab = NgramVocab::load(&a.vocab).with_context(|| format!("reading {}", a.vocab.display()))?;
    let fz = Featurizer::new(&vocab, a.ncutoff)?;
    let records = read_records(&a.input)?;
    let mut scratch = String::new();
    let mut lines = String::new();
    let mut csv = String::from("line,total_ngrams,matched_ngrams,coverage\n");
    let (mut matched, mut total) = (0usize, 0usize);
    for n in &records {
        let sides: Vec<_> = n.record.texts().map(|t| fz.featurize_with(t, &mut scratch)).collect();
        let (m, t) = sides
            .iter()
            .fold((0, 0), |(m, t), e| (m + e.matched_ngrams, t + e.total_ngrams));
        matched += m;
        total += t;
        let coverage = (t > 0).then(|| m as f64 / t as f64);
        csv.push_str(&format!(
            "{},{t},{m},{}\n",
            n.line,
            coverage.map(|c| c.to_string()).unwrap_or_default()
        ));
        let ids: Vec<&[u32]> = sides.iter().map(|e| e.ids.as_slice()).collect();
        let row = if ids.len() == 1 {
            json!({ "line": n.line, "ids": ids[0], "total_ngrams": t, "matched_ngrams": m })
        } else {
            json!({ "line": n.line, "ids1": ids[0], "ids2": ids[1], "total_ngrams": t, "matched_ngrams": m })
        };
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    write_out(a.out.as_deref(), &lines)?;
    write_out(a.stats_out.as_deref(), &csv)?;
    let overall = (total > 0).then(|| matched as f64 / total as f64);
    emit(
        cli,
        &json!({ "records": records.len(), "total_ngrams": total, "matched_ngrams": matched, "coverage": overall }),
        || {
            format!(
                "{} records, {matched}/{total} n-grams in vocab ({})\n",
                records.len(),
                overall.map_or("coverage undefined".into(), |c| format!("{:.1}% coverage", 100.0 * c))
            )
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn train(cli: &Cli, cmd: &TrainCmd) -> Result<ExitCode> {
    let (data_path, a, is_kd) = match cmd {
        TrainCmd::Kd { soft_labels, args } => (soft_labels, args, true),
        TrainCmd::Ft { train, args } => (train, args, false),
    };
    let file_config = a.config.as_ref().map(PipelineConfig::load).transpose()?;
    let mut tc = match &file_config {
        Some(c) if is_kd => c.kd.clone(),
        Some(c) => c.ft.clone(),
        None if is_kd => TrainConfig::kd(),
        None => TrainConfig::ft(),
    };
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.batch {
        tc.batch_size = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if a.max_steps.is_some() {
        tc.max_steps = a.max_steps;
    }
    if a.eval_interval.is_some() {
        tc.eval_interval = a.eval_interval;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.temperature {
        tc.temperature = v;
    }
    if a.serial {
        tc.parallel = false;
    }

    let model = match (&a.init, &a.vocab) {
        (Some(init), _) => load_model(init)?,
        (None, Some(v)) => {
            let vocab = NgramVocab::load(v).with_context(|| format!("reading {}", v.display()))?;
            let base = file_config.as_ref().map(|c| c.model.clone()).unwrap_or_default();
            let seed = file_config
                .as_ref()
                .map_or(tc.seed, |c| c.stage_seed(pipeline::INIT_SEED_OFFSET));
            DanModel::new(Arc::new(vocab), a.model.apply(base), seed)?
        }
        (None, None) => bail!("either --vocab or --init is required"),
    };
    let records = read_records(data_path)?;
    let dev = a
        .dev
        .as_ref()
        .map(|p| pipeline::dev_examples(&model, &read_records(p)?).map_err(anyhow::Error::from))
        .transpose()?;
    let outcome = pipeline::train_stage(model, &records, dev.as_deref(), &tc)?;
    outcome.model.save(&a.out)?;
    if let Some(m) = &a.metrics {
        write_out(Some(m), &metrics_csv(&outcome.metrics))?;
    }
    let value = json!({
        "out": a.out,
        "steps": outcome.steps,
        "best_step": outcome.best_step,
        "best_dev_accuracy": outcome.best_dev_accuracy,
        "metrics": outcome.metrics,
    });
    emit(cli, &value, || {
        let mut s = format!("{} steps -> {}\n", outcome.steps, a.out.display());
        if let (Some(step), Some(acc)) = (outcome.best_step, outcome.best_dev_accuracy) {
            s.push_str(&format!("best dev accuracy {:.4} at step {step}\n", acc));
        }
        s
    });
    Ok(ExitCode::SUCCESS)
}

fn predict(a: &PredictArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let fz = Featurizer::new(model.vocab(), a.ncutoff)?;
    let records = read_records(&a.input)?;
    let examples = dataset::to_examples(&records, &fz, model.config().pair_mode, DataKind::Any, model.n_classes())?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    };
    let written = examples.iter().try_for_each(|ex| -> Result<()> {
        let probs = model.predict_proba(ex.input())?;
        writeln!(out, "{}", json!({ "probs": probs, "pred": argmax(&probs) }))?;
        Ok(())
    });
    match written.and_then(|()| Ok(out.flush()?)) {
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            Ok(ExitCode::SUCCESS)
        }
        other => other.map(|()| ExitCode::SUCCESS),
    }
}

fn frequencies(model: &DanModel, f: &FreqArgs) -> Result<(FrequencySource, Vec<u64>)> {
    let docs = |p: &Option<PathBuf>, flag: &str| -> Result<Vec<String>> {
        match p {
            Some(p) => dataset::read_documents(p).with_context(|| format!("reading {}", p.display())),
            None => bail!("--{flag} is required for this --freq-source"),
        }
    };
    Ok(match f.freq_source {
        FreqSourceArg::Vocab => (model.vocab().source(), model.vocab().frequencies().to_vec()),
        FreqSourceArg::Train => {
            let d = docs(&f.train, "train")?;
            (FrequencySource::TrainOnly, ngram_frequencies(&d, model.vocab()))
        }
        FreqSourceArg::CorpusAndTrain => {
            let mut d = docs(&f.corpus, "corpus")?;
            if f.train.is_some() {
                d.extend(docs(&f.train, "train")?);
            }
            (FrequencySource::CorpusAndTrain, ngram_frequencies(&d, model.vocab()))
        }
    })
}

fn prune_one(cli: &Cli, a: &PruneArgs) -> Result<ExitCode> {
    let (Some(model_path), Some(out)) = (&a.model, &a.out) else {
        bail!("--model and --out are required");
    };
    let model = load_model(model_path)?;
    let (source, freqs) = frequencies(&model, &a.freq)?;
    let keep = match (a.keep, a.count) {
        (Some(f), _) => Keep::Fraction(f),
        (None, Some(c)) => Keep::Count(c),
        (None, None) => bail!("one of --keep or --count is required"),
    };
    let before = model.param_count();
    let pruned = prune::prune_model(&model, &PruneSpec::new(keep, source, freqs))?;
    pruned.save(out)?;
    let after = pruned.param_count();
    emit(
        cli,
        &json!({
            "out": out,
            "vocab_before": model.vocab().len(),
            "vocab_after": pruned.vocab().len(),
            "params_before": before,
            "params_after": after,
        }),
        || {
            format!(
                "kept {} of {} n-grams, {} -> {} parameters -> {}\n",
                pruned.vocab().len(),
                model.vocab().len(),
                before.total,
                after.total,
                out.display()
            )
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn prune_sweep(
    cli: &Cli,
    model: &Path,
    freq: &FreqArgs,
    fractions: &[f64],
    dev: &Path,
    csv: Option<&Path>,
) -> Result<ExitCode> {
    let model = load_model(model)?;
    let (source, freqs) = frequencies(&model, freq)?;
    let dev = read_records(dev)?;
    let rows = prune::prune_sweep(&model, source, &freqs, fractions, &dev)?;
    let table = prune::sweep_csv(&rows);
    write_out(csv, &table)?;
    emit(cli, &serde_json::to_value(&rows)?, || table.clone());
    Ok(ExitCode::SUCCESS)
}

fn cutoff_eval(cli: &Cli, a: &CutoffArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let dev = read_records(&a.dev)?;
    let rows = prune::cutoff_eval(&model, &dev, &a.cutoffs)?;
    let table = prune::cutoff_csv(&rows);
    write_out(a.csv.as_deref(), &table)?;
    emit(cli, &serde_json::to_value(&rows)?, || table.clone());
    Ok(ExitCode::SUCCESS)
}

fn coverage(cli: &Cli, model: &Path, dev: &Path, ncutoff: Option<usize>, csv: Option<&Path>) -> Result<ExitCode> {
    let model = load_model(model)?;
    let fz = Featurizer::new(model.vocab(), ncutoff)?;
    let records = read_records(dev)?;
    let examples = dataset::to_examples(&records, &fz, model.config().pair_mode, DataKind::Labeled, model.n_classes())?;
    let report = analysis::coverage_vs_loss(&model, &examples)?;
    let table = report.to_csv();
    write_out(csv, &table)?;
    emit(cli, &serde_json::to_value(&report)?, || {
        format!("{table}undefined coverage: {}\n", report.undefined_count)
    });
    Ok(ExitCode::SUCCESS)
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let records = read_records(&a.input)?;
    let config = BenchConfig {
        batch_size: a.batch,
        warmup: a.warmup,
        iters: a.iters,
        include_featurize: a.include_featurize,
        precision: a.precision,
        workers: a.workers,
    };
    let report = analysis::bench_inference(&model, &records, &config)?;
    let value = serde_json::to_value(&report)?;
    write_out(a.json_out.as_deref(), &serde_json::to_string_pretty(&value)?)?;
    emit(cli, &value, || {
        format!(
            "{:.1} samples/s (batch {}, {:?}, featurize {}, {} worker(s)); batch latency p50 {:.3} ms, p99 {:.3} ms\n{}\n",
            report.samples_per_second,
            report.batch_size,
            report.precision,
            if report.include_featurize { "included" } else { "excluded" },
            report.workers,
            report.latency_ms.p50,
            report.latency_ms.p99,
            report.device_note
        )
    });
    Ok(ExitCode::SUCCESS)
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<ExitCode> {
    let config = PipelineConfig::load(&a.grid)?;
    config.validate()?;
    let data = PipelineData::load(&config)?;
    let rows = analysis::budget_sweep(&config, &data)?;
    let table = analysis::budget_csv(&rows);
    write_out(a.csv.as_deref(), &table)?;
    emit(cli, &serde_json::to_value(&rows)?, || table.clone());
    Ok(ExitCode::SUCCESS)
}

fn validate(cli: &Cli, a: &ValidateArgs) -> Result<ExitCode> {
    let kind = match a.kind {
        KindArg::Labeled => DataKind::Labeled,
        KindArg::Soft => DataKind::SoftLabels,
        KindArg::Any => DataKind::Any,
    };
    let report = dataset::validate_data(&a.input, kind, a.n_classes)
        .with_context(|| format!("reading {}", a.input.display()))?;
    emit(cli, &serde_json::to_value(&report)?, || {
        let mut s = format!(
            "{} lines checked, {} violation(s)\n",
            report.lines_checked, report.total_violations
        );
        for v in &report.violations {
            s.push_str(&format!("  line {}: {}\n", v.line, v.message));
        }
        s
    });
    Ok(if report.is_valid() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run_pipeline(cli: &Cli, a: &PipelineArgs) -> Result<ExitCode> {
    let mut config = PipelineConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(d) = &a.out_dir {
        config.paths.out_dir = d.clone();
    }
    let report = pipeline::run_pipeline(&config, a.overwrite)?;
    emit(cli, &serde_json::to_value(&report)?, || {
        let mut s = format!("vocab {} entries, {} parameters\n", report.vocab_size, report.total_params);
        for (name, stage) in [("kd", &report.kd), ("ft", &report.ft), ("pruned", &report.pruned)] {
            if let Some(st) = stage {
                s.push_str(&format!(
                    "{name}: {} ({} steps{})\n",
                    st.model_path.display(),
                    st.steps,
                    st.dev_accuracy.map_or(String::new(), |acc| format!(", dev accuracy {acc:.4}"))
                ));
            }
        }
        if let Some(b) = &report.bench {
            s.push_str(&format!("bench: {:.1} samples/s\n", b.samples_per_second));
        }
        s
    });
    Ok(ExitCode::SUCCESS)
}

fn synth(a: &SynthArgs) -> Result<ExitCode> {
    let records = match a.task {
        TaskArg::Signal => {
            let task = SignalTask::new(SignalTaskConfig::default(), a.task_seed);
            match a.output {
                SynthOutput::Soft => task.soft_labeled(a.n, a.seed),
                _ => task.labeled(a.n, a.seed),
            }
        }
        TaskArg::Bigram => {
            if matches!(a.output, SynthOutput::Soft) {
                bail!("the bigram task has no soft-label teacher");
            }
            BigramTask::default().labeled(a.n, a.seed)
        }
    };
    match a.output {
        SynthOutput::Text => {
            let text: String = records
                .iter()
                .flat_map(|r| r.texts())
                .map(|t| format!("{t}\n"))
                .collect();
            write_out(Some(&a.out), &text)?;
        }
        _ => dataset::write_records(&a.out, &records)?,
    }
    Ok(ExitCode::SUCCESS)
}

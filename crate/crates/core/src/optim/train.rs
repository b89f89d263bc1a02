//! Training loop for the distillation and fine-tuning stages.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Example;
use crate::model::{argmax, DanModel};
use crate::optim::adam::{AdamConfig, TrainState};
use crate::optim::backward::{backward, check_supervision, Batch};
use crate::optim::loss::{ft_loss, kd_loss, LossMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the total number of updates; overrides `epochs` when set.
    pub max_steps: Option<usize>,
    /// Evaluate on dev every this many updates. `None` evaluates at the end
    /// of every epoch.
    pub eval_interval: Option<usize>,
    pub seed: u64,
    /// Softmax temperature applied to the student in distillation.
    pub temperature: f64,
    /// Compute per-batch gradients on the rayon pool. The result is
    /// bit-identical to serial execution.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::kd()
    }
}

impl TrainConfig {
    /// Distillation defaults.
    pub fn kd() -> Self {
        TrainConfig {
            mode: LossMode::Kd,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 2048,
            epochs: 1,
            max_steps: None,
            eval_interval: Some(1000),
            seed: 0,
            temperature: 1.0,
            parallel: true,
        }
    }

    /// Fine-tuning defaults.
    pub fn ft() -> Self {
        TrainConfig {
            mode: LossMode::Ft,
            lr: 1e-4,
            batch_size: 32,
            epochs: 10,
            eval_interval: None,
            ..TrainConfig::kd()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.eval_interval == Some(0) {
            return Err(Error::config("eval_interval must be positive"));
        }
        if !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::config("lr and temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("step,split,loss,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.split, r.loss, r.accuracy));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best-dev checkpoint when a dev set was given, else the final model.
    pub model: DanModel,
    pub metrics: Vec<MetricRow>,
    pub steps: usize,
    pub best_step: Option<usize>,
    pub best_dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean cross-entropy against gold labels, or KL against teacher
    /// probabilities for unlabeled examples.
    pub loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Dev-set accuracy and loss. Gold labels are preferred; examples with only
/// teacher probabilities are scored against the teacher's argmax.
pub fn evaluate(model: &DanModel, examples: &[Example]) -> Result<EvalResult> {
    if examples.is_empty() {
        return Ok(EvalResult {
            loss: 0.0,
            accuracy: 0.0,
            count: 0,
        });
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, ex) in examples.iter().enumerate() {
        let probs = model.predict_proba(ex.input())?;
        let pred = argmax(&probs);
        match (ex.label(), ex.teacher_probs()) {
            (Some(l), _) => {
                loss += ft_loss(l, &probs)?;
                correct += (pred == l) as usize;
            }
            (None, Some(t)) => {
                loss += kd_loss(t, &probs)?;
                correct += (pred == argmax(t)) as usize;
            }
            (None, None) => {
                return Err(Error::DataValidation {
                    line: i + 1,
                    message: "evaluation example has neither label nor teacher probabilities".into(),
                })
            }
        }
    }
    let n = examples.len() as f64;
    Ok(EvalResult {
        loss: loss / n,
        accuracy: correct as f64 / n,
        count: examples.len(),
    })
}

/// Runs one training stage. Example numbers in validation errors are
/// 1-based positions in `train`.
pub fn train(
    mut model: DanModel,
    train: &[Example],
    dev: Option<&[Example]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_classes = model.n_classes();
    for (i, ex) in train.iter().enumerate() {
        check_supervision(ex, config.mode, n_classes).map_err(|message| Error::DataValidation {
            line: i + 1,
            message,
        })?;
        if ex.is_pair() != model.config().pair_mode {
            return Err(Error::DataValidation {
                line: i + 1,
                message: "example kind does not match the model's pair mode".into(),
            });
        }
    }
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = config.max_steps.unwrap_or(config.epochs * steps_per_epoch);
    let mut outcome = TrainOutcome {
        model: model.clone(),
        metrics: Vec::new(),
        steps: 0,
        best_step: None,
        best_dev_accuracy: None,
    };
    if total_steps == 0 {
        return Ok(outcome);
    }
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }

    let mut state = TrainState::new(&model, config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut run_loss, mut run_correct, mut run_count, mut run_batches) = (0.0, 0usize, 0usize, 0usize);
    let mut best: Option<(f64, usize, DanModel)> = None;
    let mut step = 0usize;

    'epochs: loop {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch {
                examples: idx.iter().map(|&i| &train[i]).collect(),
                mode: config.mode,
            };
            let out = backward(&model, &batch, config.temperature, config.parallel)?;
            state.step(&mut model, &out.gradients);
            step += 1;
            run_loss += out.loss;
            run_batches += 1;
            run_correct += out.correct;
            run_count += idx.len();

            let epoch_end = b + 1 == steps_per_epoch;
            let due = match config.eval_interval {
                Some(n) => step % n == 0,
                None => epoch_end,
            };
            if due || step == total_steps {
                outcome.metrics.push(MetricRow {
                    step,
                    split: "train".into(),
                    loss: run_loss / run_batches as f64,
                    accuracy: run_correct as f64 / run_count as f64,
                });
                (run_loss, run_correct, run_count, run_batches) = (0.0, 0, 0, 0);
                if let Some(dev) = dev.filter(|d| !d.is_empty()) {
                    let r = evaluate(&model, dev)?;
                    log::info!("step {step}: dev loss {:.4} acc {:.4}", r.loss, r.accuracy);
                    outcome.metrics.push(MetricRow {
                        step,
                        split: "dev".into(),
                        loss: r.loss,
                        accuracy: r.accuracy,
                    });
                    if best.as_ref().is_none_or(|(acc, ..)| r.accuracy > *acc) {
                        best = Some((r.accuracy, step, model.clone()));
                    }
                }
            }
            if step == total_steps {
                break 'epochs;
            }
        }
    }

    outcome.steps = step;
    match best {
        Some((acc, at, m)) => {
            outcome.model = m;
            outcome.best_step = Some(at);
            outcome.best_dev_accuracy = Some(acc);
        }
        None => outcome.model = model,
    }
    Ok(outcome)
}

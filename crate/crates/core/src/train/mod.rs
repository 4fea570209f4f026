//! Supervised training with sparse cross-entropy and the evaluation harness.

mod metrics;
mod optim;

pub use metrics::{class_name, ClassMetrics, EvalReport};
pub use optim::{adam_step, optimizer_step, MomentState, Optimizer, OptimizerConfig, OptimizerKind};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tape};
use crate::model::{classify_sequence, sequence_logits, ModelError, ModelParams};
use crate::skeleton::LabeledSample;
use crate::tensor::Tensor;

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        Self::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// RMSprop squared-gradient decay.
    pub rho: f64,
    pub seed: u64,
    /// Stop after this many epochs without a lower mean training loss.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rho: 0.9,
            seed: 0,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rho", self.rho)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be at least 1 when set".into());
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            rho: self.rho,
        }
    }
}

/// `-ln(max(p[target], 1e-12))` for a probability vector.
pub fn cross_entropy_loss(predicted: &Tensor, true_class: usize) -> Result<f64, TrainError> {
    if predicted.rank() != 1 {
        return Err(TrainError::Contract(format!(
            "prediction must be a vector, got shape {:?}",
            predicted.shape()
        )));
    }
    if true_class >= predicted.len() {
        return Err(TrainError::Contract(format!(
            "class index {true_class} out of range for {} classes",
            predicted.len()
        )));
    }
    Ok(-predicted.data()[true_class].max(PROB_FLOOR).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, dropout active.
    pub loss: f64,
    /// Fraction of training samples whose in-pass argmax was correct.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// `epoch,loss,accuracy` with one row per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.accuracy));
    }
    s
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}

/// Checks that every sample fits the model: frames present, `[1, G, G]`
/// rasters, label within the class count.
pub fn check_samples(params: &ModelParams, samples: &[LabeledSample]) -> Result<(), TrainError> {
    let cfg = params.config();
    if samples.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let grid = cfg.input_grid;
    for (i, s) in samples.iter().enumerate() {
        if s.frames.is_empty() {
            return Err(TrainError::Config(format!("sample {i} ({}) has no frames", s.source)));
        }
        if let Some(f) = s.frames.iter().find(|f| f.shape() != [1, grid, grid]) {
            return Err(TrainError::Config(format!(
                "sample {i} ({}) has frame shape {:?}, model expects [1, {grid}, {grid}]",
                s.source,
                f.shape()
            )));
        }
        if s.label.class.index() >= cfg.num_classes {
            return Err(TrainError::Config(format!(
                "sample {i} is labeled {} but the model has {} classes",
                s.label.code(),
                cfg.num_classes
            )));
        }
    }
    Ok(())
}

/// Inverted dropout: kept entries scaled by `1 / (1 - rate)`.
fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Tensor {
    let keep = 1.0 - rate;
    Tensor::from_fn(&[len], |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Loss, correctness and parameter gradients for one sample.
fn sample_gradients(
    params: &ModelParams,
    sample: &LabeledSample,
    mask: Option<&Tensor>,
) -> Result<(f64, bool, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let w = params.bind(&mut tape);
    let frames: Vec<_> = sample.frames.iter().map(|f| tape.constant(f.clone())).collect();
    let logits = sequence_logits(&mut tape, &frames, params.config(), &w, mask)?;
    let probs = tape.softmax(&logits)?;
    let target = sample.label.class.index();
    let loss = tape.nll(&probs, target, PROB_FLOOR)?;
    let correct = tape.value(probs).argmax() == target;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.into_ordered(params.len());
    Ok((value, correct, grads))
}

/// Minibatch training. Sample order and dropout masks come from separate
/// ChaCha streams seeded by `config.seed`; per-sample gradients are summed
/// in batch order and averaged, so runs are bitwise reproducible.
/// `on_epoch` returning `false` stops training after that epoch.
pub fn train(
    mut params: ModelParams,
    samples: &[LabeledSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_samples(&params, samples)?;
    let rate = params.config().dropout_rate;
    let classes = params.config().num_classes;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut opt = Optimizer::new(config.optimizer_config(), params.tensors());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut total: Option<Vec<Tensor>> = None;
            for &i in batch {
                let mask = (rate > 0.0).then(|| dropout_mask(&mut dropout_rng, classes, rate));
                let (loss, ok, grads) = sample_gradients(&params, &samples[i], mask.as_ref())?;
                loss_sum += loss;
                correct += ok as usize;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Tensor> = total.expect("nonempty batch").iter().map(|g| g.scale(scale)).collect();
            opt.update(params.tensors_mut(), &mean)?;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        };
        log::info!("epoch {epoch}: loss {:.4}, accuracy {:.3}", record.loss, record.accuracy);
        history.push(record);
        if !on_epoch(&record) {
            break;
        }
        if let Some(patience) = config.early_stop_patience {
            if record.loss < best {
                best = record.loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        stopped_early,
    })
}

/// Posterior and argmax class for one sequence, dropout off.
pub fn predict(params: &ModelParams, frames: &[Tensor]) -> Result<(usize, Tensor), TrainError> {
    let probs = classify_sequence(frames, params)?;
    Ok((probs.argmax(), probs))
}

/// Inference over a labeled set.
pub fn evaluate(params: &ModelParams, samples: &[LabeledSample]) -> Result<EvalReport, TrainError> {
    check_samples(params, samples).map_err(|e| match e {
        TrainError::Config(m) if samples.is_empty() => TrainError::Contract(m.replace("training", "test")),
        other => other,
    })?;
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let (pred, _) = predict(params, &s.frames)?;
        pairs.push((s.label.class.index(), pred));
    }
    EvalReport::from_predictions(params.config().num_classes, &pairs)
}

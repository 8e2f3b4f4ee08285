//! Online SGD with step-wise learning-rate halving, and checkpoints.

pub mod checkpoint;

use std::fmt;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::autodiff::{Gradients, ParamSet, Tape};
use crate::data::TaggedCorpus;
use crate::model::{ModelError, TaggerModel};
use crate::sampling::Sampler;
use crate::scalar::Scalar;
use crate::seeded_rng;

pub use checkpoint::{checkpoint_load, checkpoint_save, from_bytes, to_bytes, CheckpointError};

pub const HALVING_THRESHOLD: f64 = 0.005;
pub const LR_FLOOR: f64 = 0.0005;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {what} at epoch {epoch}, sentence {sentence}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        sentence: usize,
    },
    #[error("{0} set is empty")]
    EmptyData(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Training stops once the rate drops below this value, and the rate is
    /// only halved while it is at least this value.
    pub lr_halt: f64,
    pub improve_thresh: f64,
    /// Apply the halving rule after each epoch.
    pub anneal: bool,
    pub window_drop: f64,
    pub hidden_drop: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.02,
            lr_halt: LR_FLOOR,
            improve_thresh: HALVING_THRESHOLD,
            anneal: true,
            window_drop: 0.25,
            hidden_drop: 0.5,
            max_epochs: 30,
            seed: 1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, p) in [("window_drop", self.window_drop), ("hidden_drop", self.hidden_drop)] {
            if !(0.0..1.0).contains(&p) {
                return Err(TrainError::Config(format!("{name} = {p} is outside [0, 1)")));
            }
        }
        if !(self.lr0 > self.lr_halt && self.lr_halt > 0.0) {
            return Err(TrainError::Config(format!(
                "need lr0 > lr_halt > 0, got {} and {}",
                self.lr0, self.lr_halt
            )));
        }
        Ok(())
    }
}

/// Halves `lr` when the relative change in dev error is at most `thresh`
/// and `lr ≥ floor`. A zero previous error leaves the rate unchanged.
pub fn lr_step_with(e_p: f64, e_c: f64, lr: f64, thresh: f64, floor: f64) -> f64 {
    if e_p == 0.0 {
        return lr;
    }
    if (e_p - e_c).abs() / e_p <= thresh && lr >= floor {
        lr * 0.5
    } else {
        lr
    }
}

pub fn lr_step(e_p: f64, e_c: f64, lr: f64) -> f64 {
    lr_step_with(e_p, e_c, lr, HALVING_THRESHOLD, LR_FLOOR)
}

/// Keep-mask with `P(1) = 1 − p`.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut dyn RngCore) -> Vec<T> {
    Sampler::train(rng).dropout(len, p)
}

/// Train-mode loss and gradients for one sentence.
pub fn sequence_gradients<T: Scalar, S: AsRef<str>, G: AsRef<str>>(
    model: &TaggerModel<T>,
    tokens: &[S],
    tags: &[G],
    rng: &mut dyn RngCore,
) -> Result<(T, Gradients<T>), ModelError> {
    let enc = model.net.encode(tokens)?;
    let gold = model.net.gold_ids(tags);
    let mut tape = Tape::new(&model.params);
    let mut sampler = Sampler::train(rng);
    let loss = model.net.loss(&mut tape, &enc, &gold, &mut sampler)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss).expect("loss is a scalar node");
    Ok((value, grads))
}

/// One forward/backward pass with fresh masks, then `θ ← θ − lr·∇θ`.
/// Returns the pre-update loss.
pub fn sgd_sequence_update<T: Scalar, S: AsRef<str>, G: AsRef<str>>(
    model: &mut TaggerModel<T>,
    tokens: &[S],
    tags: &[G],
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<T, TrainError> {
    let (loss, grads) = sequence_gradients(model, tokens, tags, rng)?;
    let fail = |what| TrainError::NonFinite {
        what,
        epoch: 0,
        sentence: 0,
    };
    if !loss.is_finite() {
        return Err(fail("loss"));
    }
    if !grads.is_finite() {
        return Err(fail("gradient"));
    }
    model.params.sgd_step(&grads, T::lit(lr));
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    /// Rate used during the epoch.
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.6},{:.6},{}", self.epoch, self.train_loss, self.dev_acc, self.lr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub epoch: usize,
    pub lr: f64,
    pub dev_errors: Vec<f64>,
    pub best_dev_acc: f64,
    pub best_epoch: usize,
    /// Parameters at the best dev accuracy (initial ones if no epoch ran).
    pub best_params: ParamSet<T>,
    pub history: Vec<EpochRecord>,
}

/// Runs epochs of per-sentence updates, evaluating on `dev` after each one.
/// `on_epoch` sees every record as soon as it is complete.
pub fn train<T: Scalar>(
    model: &mut TaggerModel<T>,
    train_set: &TaggedCorpus,
    dev: &TaggedCorpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainState<T>, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyData("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyData("dev"));
    }
    model.net.config.window_drop = config.window_drop;
    model.net.config.hidden_drop = config.hidden_drop;

    let mut rng = seeded_rng(config.seed);
    let mut state = TrainState {
        epoch: 0,
        lr: config.lr0,
        dev_errors: Vec::new(),
        best_dev_acc: model.evaluate(dev)?,
        best_epoch: 0,
        best_params: model.params.clone(),
        history: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    while state.epoch < config.max_epochs && state.lr >= config.lr_halt {
        let epoch = state.epoch + 1;
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let s = &train_set.sentences[i];
            let loss = sgd_sequence_update(model, &s.tokens, &s.tags, state.lr, &mut rng).map_err(|e| match e {
                TrainError::NonFinite { what, .. } => TrainError::NonFinite {
                    what,
                    epoch,
                    sentence: i,
                },
                other => other,
            })?;
            total += loss.to_f64_lossless();
        }
        let dev_acc = model.evaluate(dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            dev_acc,
            lr: state.lr,
        };
        on_epoch(&record);
        state.history.push(record);

        let e_c = 1.0 - dev_acc;
        if let Some(&e_p) = state.dev_errors.last().filter(|_| config.anneal) {
            state.lr = lr_step_with(e_p, e_c, state.lr, config.improve_thresh, config.lr_halt);
        }
        state.dev_errors.push(e_c);
        if dev_acc > state.best_dev_acc {
            state.best_dev_acc = dev_acc;
            state.best_epoch = epoch;
            state.best_params = model.params.clone();
        }
        state.epoch = epoch;
    }
    Ok(state)
}

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{argmax_row, Model};
use super::spec::ModelSpec;
use crate::corpus::{Block, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Blocks scored per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without a validation-accuracy gain before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Share of the training split used, in `(0, 1]`.
    pub data_fraction_train: f64,
    /// Share of the validation split used, in `(0, 1]`.
    pub data_fraction_val: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 10,
            learning_rate: 1e-3,
            early_stop_patience: 3,
            seed: 0,
            data_fraction_train: 1.0,
            data_fraction_val: 1.0,
        }
    }
}

impl TrainConfig {
    /// The reduced-data setting used to score candidates during search.
    pub fn for_search(self) -> Self {
        TrainConfig {
            data_fraction_train: 0.1,
            data_fraction_val: 0.4,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch size, epoch limit and patience must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        for f in [self.data_fraction_train, self.data_fraction_val] {
            if !(f > 0.0 && f <= 1.0) {
                return bad("data fractions must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state for one model.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) {
        self.step += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let lr = self.learning_rate * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(self.epsilon));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *w = *w - lr * *m / (v.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Mean loss of every optimizer step, in order.
    pub batch_losses: Vec<f64>,
}

/// Loss, accuracy and predicted class of a set of blocks in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<(usize, f64)>,
}

pub fn evaluate<T: Scalar>(model: &Model<T>, blocks: &[&Block]) -> Result<Evaluation> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(blocks.len());
    let n_classes = model.spec().n_classes;
    for chunk in blocks.chunks(EVAL_BATCH) {
        let bytes: Vec<&[u8]> = chunk.iter().map(|b| b.bytes.as_slice()).collect();
        let probs = model.predict_proba(&bytes)?;
        for (row, b) in probs.values().chunks(n_classes).zip(chunk) {
            if b.label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: b.label,
                    classes: n_classes,
                });
            }
            let pred = argmax_row(row);
            correct += (pred.0 == b.label) as usize;
            loss -= row[b.label].as_f64().max(f64::MIN_POSITIVE).ln();
            predictions.push(pred);
        }
    }
    let n = blocks.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

fn take_fraction(mut idx: Vec<usize>, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction < 1.0 {
        idx.shuffle(rng);
        let keep = ((idx.len() as f64 * fraction).ceil() as usize).max(1);
        idx.truncate(keep);
        idx.sort_unstable();
    }
    idx
}

/// Mini-batch training with the adaptive-moment optimizer.
///
/// Each epoch visits the (optionally subsampled) training split in a fresh
/// seeded order, then scores the validation split. Training stops after
/// `max_epochs`, after `early_stop_patience` epochs without a validation
/// accuracy gain, or once validation accuracy reaches 1.
pub fn train(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if spec.n_classes != data.n_classes() {
        return Err(Error::InvalidInput(format!(
            "model has {} classes, dataset has {}",
            spec.n_classes,
            data.n_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let train_idx = take_fraction(data.indices(Split::Train), cfg.data_fraction_train, &mut rng);
    let val_idx = take_fraction(data.indices(Split::Val), cfg.data_fraction_val, &mut rng);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation splits must be nonempty".into(),
        ));
    }
    let val_blocks: Vec<&Block> = val_idx.iter().map(|&i| &data.blocks[i]).collect();

    let mut model = Model::<f32>::init(spec, cfg.seed)?;
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut best = (model.params().to_vec(), 0usize, f64::NEG_INFINITY);
    let mut history = Vec::new();
    let mut batch_losses = Vec::new();
    let mut order = train_idx;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let bytes: Vec<&[u8]> = batch.iter().map(|&i| data.blocks[i].bytes.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.blocks[i].label).collect();
            let (loss, probs, grads) = model.loss_and_grads(&bytes, &labels, true, &mut rng)?;
            for (row, &label) in probs.values().chunks(spec.n_classes).zip(&labels) {
                correct += (argmax_row(row).0 == label) as usize;
            }
            loss_sum += loss * batch.len() as f64;
            batch_losses.push(loss);
            adam.update(model.params_mut(), &grads);
        }
        let val = evaluate(&model, &val_blocks)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        });
        if val.accuracy > best.2 {
            best = (model.params().to_vec(), epoch, val.accuracy);
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.early_stop_patience || val.accuracy >= 1.0 {
            break;
        }
    }
    let (params, best_epoch, best_val_accuracy) = best;
    Ok(TrainOutcome {
        model: Model::from_params(spec, params)?,
        history,
        best_epoch,
        best_val_accuracy,
        batch_losses,
    })
}

/// `epoch,train_loss,train_accuracy,val_loss,val_accuracy`, one row per epoch.
pub fn write_history_csv<W: Write>(mut out: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,train_loss,train_accuracy,val_loss,val_accuracy")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        )?;
    }
    Ok(())
}

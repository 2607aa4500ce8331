//! Minibatch training shared by the autoencoder and the classifiers:
//! Adam updates, early stopping with best-weight restore, and
//! reduce-learning-rate-on-plateau.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, AugmentConfig};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    adam_step, loss, loss_gradient, softmax, softmax_cross_entropy_gradient, Gradients,
    LayerParams, LossKind, Network, OptimizerState, Tensor,
};

/// Per-epoch record of a training run. Accuracy columns are empty for
/// reconstruction training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// Learning rate used during each epoch.
    pub learning_rate: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Zero-based epoch whose weights were returned.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_loss[e])
    }

    /// `epoch,train_loss,val_loss,train_acc,val_acc,lr`, one row per epoch
    /// (epochs numbered from 1).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,train_acc,val_acc,lr")?;
        let cell = |v: Option<&f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in 0..self.epochs_run {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e + 1,
                self.train_loss[e],
                self.val_loss[e],
                cell(self.train_acc.get(e)),
                cell(self.val_acc.get(e)),
                self.learning_rate[e]
            )?;
        }
        Ok(())
    }
}

/// Stops once validation loss has not improved for `patience` epochs.
/// A patience of zero disables stopping.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Returns `(improved, should_stop)`.
    pub fn observe(&mut self, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
            return (true, false);
        }
        self.wait += 1;
        (false, self.patience > 0 && self.wait >= self.patience)
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// validation improvement, never going below `min_lr`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    patience: usize,
    factor: f64,
    min_lr: f64,
    lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        Self {
            patience,
            factor,
            min_lr,
            lr: initial_lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's validation loss; returns the rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.patience > 0 && self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

/// What a network is trained to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Objective {
    /// MSE between output and input.
    Reconstruction,
    /// Softmax cross-entropy over linear logits.
    Classification { n_classes: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub plateau: Option<PlateauConfig>,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

/// A training item; `label` is ignored for reconstruction.
pub(crate) struct Example<'a, T> {
    pub input: &'a Tensor<T>,
    pub label: usize,
}

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn one_hot<T: Scalar>(n: usize, k: usize) -> Vec<T> {
    let mut v = vec![T::zero(); n];
    v[k] = T::one();
    v
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `(loss, correct, d loss / d output)` for one forward output.
fn score<T: Scalar>(
    objective: Objective,
    output: &Tensor<T>,
    example: &Example<'_, T>,
    want_grad: bool,
) -> Result<(f64, bool, Option<Tensor<T>>)> {
    match objective {
        Objective::Reconstruction => {
            let l = loss(LossKind::Mse, output.as_slice(), example.input.as_slice())?;
            let g = if want_grad {
                let g = loss_gradient(LossKind::Mse, output.as_slice(), example.input.as_slice())?;
                Some(Tensor::from_vec(output.shape(), g)?)
            } else {
                None
            };
            Ok((l.to_f64_lossy(), false, g))
        }
        Objective::Classification { n_classes } => {
            let target = one_hot::<T>(n_classes, example.label);
            let probs = softmax(output.as_slice());
            let l = loss(LossKind::CategoricalCrossEntropy, &probs, &target)?;
            let g = if want_grad {
                Some(Tensor::from_vec(
                    output.shape(),
                    softmax_cross_entropy_gradient(output.as_slice(), &target)?,
                )?)
            } else {
                None
            };
            Ok((
                l.to_f64_lossy(),
                argmax(output.as_slice()) == example.label,
                g,
            ))
        }
    }
}

/// Mean loss and accuracy in inference mode.
pub(crate) fn evaluate<T: Scalar>(
    net: &Network<T>,
    examples: &[Example<'_, T>],
    objective: Objective,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return contract_err("cannot evaluate on an empty set");
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    for ex in examples {
        let out = net.infer(ex.input)?;
        let (l, ok, _) = score(objective, &out, ex, false)?;
        total += l;
        correct += ok as usize;
    }
    let n = examples.len() as f64;
    Ok((total / n, correct as f64 / n))
}

pub(crate) fn fit<T: Scalar>(
    net: &mut Network<T>,
    train: &[Example<'_, T>],
    val: &[Example<'_, T>],
    options: &FitOptions,
    objective: Objective,
) -> Result<TrainHistory> {
    if train.is_empty() {
        return contract_err("training set is empty");
    }
    if val.is_empty() {
        return contract_err("validation set is empty");
    }
    if options.batch_size == 0 {
        return contract_err("batch size must be at least 1");
    }
    let classify = matches!(objective, Objective::Classification { .. });
    let mut history = TrainHistory::default();
    let mut optimizer = OptimizerState::new(net.params(), options.learning_rate);
    let mut stopper = EarlyStopping::new(options.early_stop_patience);
    let mut plateau = options
        .plateau
        .map(|p| PlateauScheduler::new(options.learning_rate, p.patience, p.factor, p.min_lr));
    let mut best_params: Option<Vec<LayerParams<T>>> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..options.epochs {
        let lr = plateau
            .as_ref()
            .map_or(options.learning_rate, PlateauScheduler::learning_rate);
        optimizer.learning_rate = lr;
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            options.seed,
            epoch as u64,
            0,
        )));

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for batch in order.chunks(options.batch_size) {
            let mut grads = Gradients::zeros_like(net);
            // items are reduced in batch order, so results are deterministic
            for &i in batch {
                let ex = &train[i];
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    options.seed,
                    epoch as u64 + 1,
                    i as u64 + 1,
                ));
                let augmented;
                let input = match &options.augment {
                    Some(cfg) => {
                        augmented = augment(ex.input, cfg, &mut rng);
                        &augmented
                    }
                    None => ex.input,
                };
                let acts = net.forward(input, true, &mut rng)?;
                let (l, ok, g) = score(
                    objective,
                    acts.output(),
                    &Example {
                        input,
                        label: ex.label,
                    },
                    true,
                )?;
                epoch_loss += l;
                epoch_correct += ok as usize;
                grads.add_assign(&net.backward(&acts, &g.expect("gradient requested"))?);
            }
            grads.scale(T::from_f64_lossy(1.0 / batch.len() as f64));
            adam_step(net.params_mut(), &grads, &mut optimizer)?;
        }

        let (val_loss, val_acc) = evaluate(net, val, objective)?;
        history.train_loss.push(epoch_loss / train.len() as f64);
        history.val_loss.push(val_loss);
        if classify {
            history
                .train_acc
                .push(epoch_correct as f64 / train.len() as f64);
            history.val_acc.push(val_acc);
        }
        history.learning_rate.push(lr);
        history.epochs_run = epoch + 1;

        let (improved, stop) = stopper.observe(val_loss);
        if improved {
            best_params = Some(net.params().to_vec());
            history.best_epoch = Some(epoch);
        }
        if let Some(p) = plateau.as_mut() {
            p.observe(val_loss);
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    if let Some(best) = best_params {
        net.params_mut().clone_from_slice(&best);
    }
    Ok(history)
}

//! Adam and the mini-batch / early-stopping loop shared by every trained model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selector::TrainConfig;
use crate::tensor::Matrix;

/// RNG for one named purpose within a run. Streams keep the data split, the
/// initialization and each epoch's shuffle independent of one another.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const STREAM_SPLIT: u64 = 0;
pub(crate) const STREAM_INIT: u64 = 1;
const STREAM_EPOCH_BASE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), grad.len());
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// A model the early-stopping loop can train.
pub trait Trainable: Clone {
    /// Mini-batch objective and one gradient per parameter tensor, ordered
    /// like [`Trainable::params_mut`].
    fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Predicted class per row (argmax of logits, lower class on ties).
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>>;

    /// Objective on a held-out set, used to order evaluations with equal accuracy.
    fn objective(&self, x: &Matrix, labels: &[usize]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub evals: Vec<EvalPoint>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Seeded shuffle split into (train, validation) row indices. Both parts
/// are returned in ascending order.
pub fn split_train_val(m: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let n_val = ((m as f64 * val_fraction).round() as usize).clamp(1, m.saturating_sub(1).max(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Adam on shuffled mini-batches with periodic validation. Keeps the
/// parameters of the best evaluation (higher accuracy, then lower objective)
/// and stops after `patience` evaluations without improvement.
pub fn fit<M: Trainable>(
    model: &mut M,
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let m = train_x.rows();
    if m == 0 {
        return Err(Error::Config("empty training set".into()));
    }
    let batch = cfg.batch_size.clamp(1, m);
    let adam_params = AdamParams {
        lr: cfg.lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let mut optimizers: Vec<Adam> = model
        .params_mut()
        .iter()
        .map(|p| Adam::new(p.len(), adam_params))
        .collect();

    let eval_every = cfg.eval_every.max(1);
    let mut evals = Vec::new();
    let mut best = model.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs_run = 0;

    let mut evaluate = |model: &M, epoch: usize, train_loss: f64, evals: &mut Vec<EvalPoint>| -> Result<bool> {
        let val_acc = accuracy(&model.predict(val_x)?, val_y);
        let val_loss = model.objective(val_x, val_y)?;
        evals.push(EvalPoint {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        let improved = val_acc > best_key.0 || (val_acc == best_key.0 && val_loss < best_key.1);
        if improved {
            best_key = (val_acc, val_loss);
            best = model.clone();
            best_epoch = epoch;
        }
        Ok(improved)
    };

    let initial_loss = model.objective(train_x, train_y)?;
    evaluate(model, 0, initial_loss, &mut evals)?;

    let mut order: Vec<usize> = (0..m).collect();
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        if batch == m {
            let (loss, grads) = model.loss_and_grads(train_x, train_y)?;
            step(model, &mut optimizers, &grads, loss, epoch)?;
            loss_sum += loss;
            batches += 1;
        } else {
            order.shuffle(&mut stream_rng(cfg.seed, STREAM_EPOCH_BASE + epoch as u64));
            for chunk in order.chunks(batch) {
                let x = train_x.select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
                let (loss, grads) = model.loss_and_grads(&x, &y)?;
                step(model, &mut optimizers, &grads, loss, epoch)?;
                loss_sum += loss;
                batches += 1;
            }
        }

        if epoch % eval_every == 0 || epoch == cfg.max_epochs {
            let improved = evaluate(model, epoch, loss_sum / batches as f64, &mut evals)?;
            if improved {
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stop_reason = StopReason::EarlyStopping;
                    break;
                }
            }
        }
    }

    *model = best;
    Ok(TrainReport {
        evals,
        best_epoch,
        best_val_acc: best_key.0,
        epochs_run,
        stop_reason,
    })
}

fn step<M: Trainable>(
    model: &mut M,
    optimizers: &mut [Adam],
    grads: &[Vec<f64>],
    loss: f64,
    epoch: usize,
) -> Result<()> {
    if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::DivergenceDetected { epoch });
    }
    for ((p, g), opt) in model.params_mut().into_iter().zip(grads).zip(optimizers) {
        opt.step(p, g);
    }
    Ok(())
}

//! Mini-batch ADAM training on the squared-error regression loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::layers::mse_loss;
use crate::network::Network;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    pub shuffle_seed: u64,
    /// Call the checkpoint hook every this many iterations.
    pub checkpoint_every: Option<usize>,
    /// Fraction of patches held out for validation.
    pub val_fraction: f64,
    /// Stop after this many iterations even if epochs remain.
    pub max_iterations: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// 25 epochs, batch 10, learning rate 0.001, 80/20 patch split.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 10,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
            checkpoint_every: None,
            val_fraction: 0.2,
            max_iterations: None,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be >= 1");
        }
        Ok(())
    }
}

/// Full mini-batches per epoch; the incomplete last batch is dropped.
pub fn iterations_per_epoch(train_patches: usize, batch_size: usize) -> usize {
    train_patches / batch_size
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
}

/// First and second moment estimates per parameter vector, plus the step
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        Self::for_lengths(net.params().iter().map(|p| p.len()))
    }

    pub fn for_lengths(lens: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<Real>> = lens.into_iter().map(|l| vec![0.0; l]).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update:
///
/// ```text
/// t ← t + 1
/// m ← β1·m + (1 − β1)·g
/// v ← β2·v + (1 − β2)·g²
/// θ ← θ − lr · (m / (1 − β1^t)) / (sqrt(v / (1 − β2^t)) + ε)
/// ```
pub fn adam_step(
    params: &mut [&mut [Real]],
    grads: &[&[Real]],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} parameter vectors, {} gradients, {} moment vectors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() || p.len() != state.v[i].len() {
            return Err(Error::shape(format!(
                "adam: parameter vector {i} has length {} but gradient {}",
                p.len(),
                g.len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn train_losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,epoch,split,loss\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{:e}\n",
                r.iteration,
                r.epoch,
                r.split.as_str(),
                r.loss
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Patch-level train/validation split: a seeded shuffle, the first
/// `round(n·val_fraction)` indices become validation. Both lists are sorted.
pub fn split_patches(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    ids.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Keeps the split permutation independent of the per-epoch shuffles.
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct TrainOutcome {
    pub network: Network,
    pub history: LossHistory,
    pub optimizer: AdamState,
}

/// Mean per-sample loss of `net` in inference mode over `ids`.
pub fn evaluate_loss(
    net: &Network,
    set: &TrainingSet,
    ids: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::input("no patches to evaluate"));
    }
    let mut total = 0.0f64;
    for chunk in ids.chunks(batch_size) {
        let (x, y) = set.batch(chunk)?;
        let pred = net.infer(&x)?;
        let (loss, _) = mse_loss(&pred, &y)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / ids.len() as f64)
}

/// Trains `net` on `set`. The hook runs every `checkpoint_every` iterations
/// with the iteration number, network and optimizer state.
pub fn train(
    set: &TrainingSet,
    net: Network,
    cfg: &TrainConfig,
    hook: Option<&mut dyn FnMut(usize, &Network, &AdamState) -> Result<()>>,
) -> Result<TrainOutcome> {
    train_from(set, net, None, cfg, hook)
}

/// Like [`train`], optionally resuming from saved optimizer state.
pub fn train_from(
    set: &TrainingSet,
    mut net: Network,
    optimizer: Option<AdamState>,
    cfg: &TrainConfig,
    mut hook: Option<&mut dyn FnMut(usize, &Network, &AdamState) -> Result<()>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let (train_ids, val_ids) = split_patches(set.len(), cfg.val_fraction, cfg.shuffle_seed);
    if train_ids.len() < cfg.batch_size {
        return Err(Error::input(format!(
            "{} training patches cannot fill a batch of {}",
            train_ids.len(),
            cfg.batch_size
        )));
    }
    let mut state = match optimizer {
        Some(s) => s,
        None => AdamState::new(&net),
    };
    let hyper = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut history = LossHistory::default();
    let mut iteration = 0usize;
    let per_epoch = iterations_per_epoch(train_ids.len(), cfg.batch_size);
    log::info!(
        "training on {} patches ({} validation), {} iterations per epoch",
        train_ids.len(),
        val_ids.len(),
        per_epoch
    );

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order = train_ids.clone();
        order.shuffle(&mut rng);
        let mut stop = false;
        for batch in order.chunks_exact(cfg.batch_size) {
            iteration += 1;
            let (x, y) = set.batch(batch)?;
            let (pred, cache) = net.forward_train(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    epoch,
                    batch: batch.to_vec(),
                    loss: loss as f64,
                });
            }
            let grads = net.backward(&grad, Some(cache))?;
            adam_step(&mut net.params_mut(), &grads.slices(), &mut state, &hyper)?;
            history.records.push(LossRecord {
                iteration,
                epoch,
                split: Split::Train,
                loss: loss as f64,
            });
            if iteration % 50 == 0 {
                log::info!("epoch {epoch} iteration {iteration} loss {loss:.6}");
            }
            if let (Some(every), Some(h)) = (cfg.checkpoint_every, hook.as_mut()) {
                if iteration % every == 0 {
                    h(iteration, &net, &state)?;
                }
            }
            if cfg.max_iterations.is_some_and(|m| iteration >= m) {
                stop = true;
                break;
            }
        }
        if !val_ids.is_empty() {
            let loss = evaluate_loss(&net, set, &val_ids, cfg.batch_size)?;
            log::info!("epoch {epoch} validation loss {loss:.6}");
            history.records.push(LossRecord {
                iteration,
                epoch,
                split: Split::Validation,
                loss,
            });
        }
        if stop {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        network: net,
        history,
        optimizer: state,
    })
}

//! Mini-batch SGD with momentum, plateau learning-rate decay and early
//! stopping on a held-out fraction. Shared by the mapper and the
//! meta-embedding autoencoder.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// A model whose parameters can be viewed as flat slices.
pub trait Params: Clone {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// A same-shaped value with every parameter zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fraction of examples held out for plateau detection and early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 1,
            validation_fraction: 0.1,
            patience: 5,
        }
    }
}

/// Consecutive non-improving epochs that trigger a learning-rate halving.
const PLATEAU_EPOCHS: usize = 2;
const LR_DECAY: f64 = 0.5;

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Objective on the training examples before any update.
    pub initial_loss: f64,
    /// Mean mini-batch objective per epoch.
    pub train_losses: Vec<f64>,
    /// Held-out objective per epoch (training objective when nothing is held out).
    pub val_losses: Vec<f64>,
    /// Epoch (1-based) whose parameters were returned; 0 means the initialization.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Train `model` over examples `0..n`.
///
/// `loss_grad(model, batch)` returns the mean objective over the batch and its
/// gradient; `loss(model, idx)` evaluates the objective only. The parameters
/// with the lowest held-out objective are returned.
pub fn train_minibatch<M, G, L>(
    mut model: M,
    n: usize,
    cfg: &SgdConfig,
    loss_grad: G,
    loss: L,
) -> Result<(M, TrainingHistory)>
where
    M: Params,
    G: Fn(&M, &[usize]) -> (f64, M),
    L: Fn(&M, &[usize]) -> f64,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Empty("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(n - 1);
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let val = if val.is_empty() { train.clone() } else { val.to_vec() };

    let mut history = TrainingHistory {
        initial_loss: loss(&model, &train),
        ..Default::default()
    };
    let mut best = model.clone();
    let mut best_val = loss(&model, &val);
    let mut velocity = model.zeros_like();
    let mut lr = cfg.learning_rate;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            let (l, grad) = loss_grad(&model, batch);
            total += l * batch.len() as f64;
            for ((p, v), g) in model
                .slices_mut()
                .into_iter()
                .zip(velocity.slices_mut())
                .zip(grad.slices())
            {
                for i in 0..p.len() {
                    v[i] = cfg.momentum * v[i] - lr * g[i];
                    p[i] += v[i];
                }
            }
        }
        if !model.is_finite() {
            return Err(Error::InvalidInput(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        history.train_losses.push(total / train.len() as f64);
        let v = loss(&model, &val);
        history.val_losses.push(v);
        if v < best_val {
            best_val = v;
            best = model.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
            if since_best % PLATEAU_EPOCHS == 0 {
                lr *= LR_DECAY;
            }
        }
    }
    Ok((best, history))
}

/// Glorot-uniform `rows × cols` matrix.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// Stack the vectors of `words` as columns of a `dim × words.len()` matrix.
pub(crate) fn columns(emb: &Embedding, words: &[impl AsRef<str>]) -> Result<DMatrix<f64>> {
    let rows: Vec<&[f32]> = words
        .iter()
        .map(|w| {
            emb.vector(w.as_ref())
                .ok_or_else(|| Error::OutOfVocabulary(w.as_ref().to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(emb.dim(), rows.len(), |r, c| rows[c][r] as f64))
}

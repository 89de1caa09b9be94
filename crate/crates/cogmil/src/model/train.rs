//! Mini-batch training: Adam without bias terms to update, linear
//! learning-rate decay with a floor, dropout on the fused representation,
//! and early stopping on mean validation loss.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{backward, Gradients};
use super::forward::{forward, loss, predict, Dropout};
use super::{ModelError, ModelParams};
use crate::embed::EmbeddedBag;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Subtracted from lr0 once per epoch.
    pub lr_decay: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Consecutive epochs without strict validation-loss improvement before
    /// stopping.
    pub patience: u32,
    pub max_epochs: u32,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.0005,
            lr_decay: 0.00001,
            lr_min: 0.00001,
            batch_size: 32,
            dropout: 0.5,
            patience: 10,
            max_epochs: 200,
            seed: 17,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// lr(e) = max(lr0 - e * decay, lr_min), e counted from zero.
pub fn learning_rate(cfg: &TrainConfig, epoch: u32) -> f64 {
    (cfg.lr0 - epoch as f64 * cfg.lr_decay).max(cfg.lr_min)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        Self {
            m: Gradients::zeros(params.dims),
            v: Gradients::zeros(params.dims),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        let k = params.dims.k;
        for idx in 0..2 * k + 3 {
            let (g, m, v, p) = match idx {
                i if i < 2 * k => {
                    let view = i / 2;
                    if i % 2 == 0 {
                        (&grads.w_g[view], &mut self.m.w_g[view], &mut self.v.w_g[view], &mut params.w_g[view])
                    } else {
                        (&grads.w_f[view], &mut self.m.w_f[view], &mut self.v.w_f[view], &mut params.w_f[view])
                    }
                }
                i if i == 2 * k => (&grads.w_z, &mut self.m.w_z, &mut self.v.w_z, &mut params.w_z),
                i if i == 2 * k + 1 => (&grads.w_c, &mut self.m.w_c, &mut self.v.w_c, &mut params.w_c),
                _ => (&grads.w_o, &mut self.m.w_o, &mut self.v.w_o, &mut params.w_o),
            };
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; only a strictly lower value counts as
/// improvement.
pub struct EarlyStopping {
    best: f64,
    since: u32,
    patience: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32) -> Self {
        Self {
            best: f64::INFINITY,
            since: 0,
            patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.since = 0;
            StopDecision::Improved
        } else {
            self.since += 1;
            if self.since >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Mean cross-entropy without dropout.
pub fn mean_loss(params: &ModelParams, bags: &[EmbeddedBag]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for bag in bags {
        let fwd = forward(params, bag, &mut Dropout::Off)?;
        total += loss(&fwd.probs, &bag.y);
    }
    Ok(total / bags.len() as f64)
}

/// Fraction of bags whose argmax prediction hits the gold label.
pub fn accuracy(params: &ModelParams, bags: &[EmbeddedBag]) -> Result<f64, ModelError> {
    let mut hits = 0usize;
    for bag in bags {
        let (label, _) = predict(params, bag)?;
        if label == bag.label_index {
            hits += 1;
        }
    }
    Ok(hits as f64 / bags.len() as f64)
}

pub fn train(
    params0: &ModelParams,
    train_bags: &[EmbeddedBag],
    val_bags: &[EmbeddedBag],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>), ModelError> {
    train_with(params0, train_bags, val_bags, cfg, |_, _| {})
}

/// Training loop with a per-epoch observer (called with the updated
/// parameters after each epoch; useful for learning-curve probes).
pub fn train_with(
    params0: &ModelParams,
    train_bags: &[EmbeddedBag],
    val_bags: &[EmbeddedBag],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&ModelParams, &EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>), ModelError> {
    if train_bags.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if val_bags.is_empty() {
        return Err(ModelError::EmptySplit("val"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params0.clone();
    let mut adam = Adam::new(&params, cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut history = Vec::new();

    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let lr = learning_rate(cfg, epoch);
        order.shuffle(&mut rng);

        let mut total_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros(params.dims);
            for &i in chunk {
                let bag = &train_bags[i];
                let fwd = forward(
                    &params,
                    bag,
                    &mut Dropout::Sample {
                        rate: cfg.dropout,
                        rng: &mut rng,
                    },
                )?;
                total_loss += loss(&fwd.probs, &bag.y);
                grads.add_assign(&backward(&params, bag, &fwd.trace));
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.step(&mut params, &grads, lr);
        }

        let train_loss = total_loss / train_bags.len() as f64;
        if !train_loss.is_finite() {
            return Err(ModelError::DivergedLoss { epoch });
        }
        let val_loss = mean_loss(&params, val_bags)?;
        let stats = EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        };
        on_epoch(&params, &stats);
        history.push(stats);

        match stopper.observe(val_loss) {
            StopDecision::Improved => best_params = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok((best_params, history))
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochStats]) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,train_loss,val_loss")?;
    for row in history {
        writeln!(
            w,
            "{},{},{},{}",
            row.epoch, row.lr, row.train_loss, row.val_loss
        )?;
    }
    Ok(())
}

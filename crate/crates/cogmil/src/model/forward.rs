//! Forward pass, loss, and prediction.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, ModelParams};
use crate::embed::EmbeddedBag;

/// Dropout behavior for one forward call. `Fixed` pins the keep pattern so
/// finite-difference checks can evaluate the same stochastic function twice.
pub enum Dropout<'r> {
    Off,
    Sample { rate: f64, rng: &'r mut ChaCha8Rng },
    Fixed { rate: f64, keep: &'r [f64] },
}

/// Intermediates retained for the backward pass.
pub struct Trace {
    pub(crate) gate: Vec<Array2<f64>>,
    pub(crate) feat: Vec<Array2<f64>>,
    pub(crate) z_prime: Array1<f64>,
    pub(crate) concat: Array1<f64>,
    pub(crate) relu_active: Array1<f64>,
    pub(crate) v_dropped: Array1<f64>,
    /// Elementwise multiplier dropout applied to v (all ones when off).
    pub(crate) drop_factor: Array1<f64>,
    pub(crate) probs: Array1<f64>,
}

pub struct Forward {
    pub probs: Array1<f64>,
    pub trace: Trace,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|l| (l - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn check_shapes(params: &ModelParams, bag: &EmbeddedBag) -> Result<(), ModelError> {
    let d = params.dims;
    let n = bag.x.nrows();
    if bag.x.ncols() != d.d_e || bag.z.len() != d.d_e {
        return Err(ModelError::ShapeMismatch(format!(
            "embeddings are {}-dimensional, model expects {}",
            bag.x.ncols(),
            d.d_e
        )));
    }
    if bag.mask.len() != n || bag.p.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "mask/p length {} vs {} instance rows",
            bag.mask.len(),
            n
        )));
    }
    if bag.y.len() != d.c {
        return Err(ModelError::ShapeMismatch(format!(
            "target length {} vs {} classes",
            bag.y.len(),
            d.c
        )));
    }
    Ok(())
}

pub fn forward(
    params: &ModelParams,
    bag: &EmbeddedBag,
    dropout: &mut Dropout,
) -> Result<Forward, ModelError> {
    check_shapes(params, bag)?;
    let d = params.dims;

    // Combined per-instance weight: padding rows carry p=0 and mask=0, but
    // multiplying both keeps the aggregation safe against either alone.
    let w = (&bag.mask * &bag.p).insert_axis(Axis(1));

    let mut h_multi: Array1<f64> = Array1::zeros(d.d_h);
    let mut gate = Vec::with_capacity(d.k);
    let mut feat = Vec::with_capacity(d.k);
    for k in 0..d.k {
        let g = bag.x.dot(&params.w_g[k].t()).mapv(sigmoid);
        let t = bag.x.dot(&params.w_f[k].t()).mapv(f64::tanh);
        let weighted = &(&g * &t) * &w;
        h_multi += &weighted.sum_axis(Axis(0));
        gate.push(g);
        feat.push(t);
    }
    h_multi /= d.k as f64;

    let z_prime = params.w_z.dot(&bag.z).mapv(f64::tanh);
    let concat = concatenate(Axis(0), &[h_multi.view(), z_prime.view()]).unwrap();
    let c_pre = params.w_c.dot(&concat);
    let relu_active = c_pre.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
    let v = &c_pre * &relu_active;

    let drop_factor = match dropout {
        Dropout::Off => Array1::ones(d.d_h),
        Dropout::Sample { rate, rng } => {
            let keep_prob = 1.0 - *rate;
            Array1::from_shape_fn(d.d_h, |_| {
                if rng.random::<f64>() < keep_prob {
                    1.0 / keep_prob
                } else {
                    0.0
                }
            })
        }
        Dropout::Fixed { rate, keep } => {
            if keep.len() != d.d_h {
                return Err(ModelError::ShapeMismatch(format!(
                    "dropout mask length {} vs d_h {}",
                    keep.len(),
                    d.d_h
                )));
            }
            let keep_prob = 1.0 - *rate;
            Array1::from_iter(keep.iter().map(|&m| m / keep_prob))
        }
    };
    let v_dropped = &v * &drop_factor;

    let logits = params.w_o.dot(&v_dropped);
    let probs = softmax(&logits);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::NonFiniteActivation("softmax".to_string()));
    }

    Ok(Forward {
        probs: probs.clone(),
        trace: Trace {
            gate,
            feat,
            z_prime,
            concat,
            relu_active,
            v_dropped,
            drop_factor,
            probs,
        },
    })
}

/// Cross-entropy against a one-hot target, log-clamped at 1e-12.
pub fn loss(probs: &Array1<f64>, y: &Array1<f64>) -> f64 {
    -probs
        .iter()
        .zip(y.iter())
        .map(|(&p, &t)| t * p.max(1e-12).ln())
        .sum::<f64>()
}

/// Argmax prediction; ties break to the lowest class index.
pub fn predict(params: &ModelParams, bag: &EmbeddedBag) -> Result<(usize, Array1<f64>), ModelError> {
    let fwd = forward(params, bag, &mut Dropout::Off)?;
    let mut best = 0;
    for (i, &p) in fwd.probs.iter().enumerate() {
        if p > fwd.probs[best] {
            best = i;
        }
    }
    Ok((best, fwd.probs))
}

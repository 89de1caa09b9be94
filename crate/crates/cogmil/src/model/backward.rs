//! Exact reverse-mode gradients for the fixed computation graph.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::Trace;
use super::{Dims, ModelParams};
use crate::embed::EmbeddedBag;

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dims: Dims,
    pub w_g: Vec<Array2<f64>>,
    pub w_f: Vec<Array2<f64>>,
    pub w_z: Array2<f64>,
    pub w_c: Array2<f64>,
    pub w_o: Array2<f64>,
}

impl Gradients {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            w_g: (0..dims.k).map(|_| Array2::zeros((dims.d_h, dims.d_e))).collect(),
            w_f: (0..dims.k).map(|_| Array2::zeros((dims.d_h, dims.d_e))).collect(),
            w_z: Array2::zeros((dims.d_h, dims.d_e)),
            w_c: Array2::zeros((dims.d_h, 2 * dims.d_h)),
            w_o: Array2::zeros((dims.c, dims.d_h)),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for k in 0..self.dims.k {
            self.w_g[k] += &other.w_g[k];
            self.w_f[k] += &other.w_f[k];
        }
        self.w_z += &other.w_z;
        self.w_c += &other.w_c;
        self.w_o += &other.w_o;
    }

    pub fn scale(&mut self, factor: f64) {
        for k in 0..self.dims.k {
            self.w_g[k] *= factor;
            self.w_f[k] *= factor;
        }
        self.w_z *= factor;
        self.w_c *= factor;
        self.w_o *= factor;
    }

    /// Largest absolute entry; handy for divergence diagnostics.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.dims.k {
            for &v in self.w_g[k].iter().chain(self.w_f[k].iter()) {
                m = m.max(v.abs());
            }
        }
        for &v in self.w_z.iter().chain(self.w_c.iter()).chain(self.w_o.iter()) {
            m = m.max(v.abs());
        }
        m
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

/// Gradient of the cross-entropy loss w.r.t. every parameter matrix, for one
/// bag, given the trace of the matching forward call (including its dropout
/// pattern).
pub fn backward(params: &ModelParams, bag: &EmbeddedBag, trace: &Trace) -> Gradients {
    let d = params.dims;
    let mut grads = Gradients::zeros(d);

    // Softmax + cross-entropy collapse to probs - y at the logits.
    let dlogits = &trace.probs - &bag.y;
    grads.w_o = outer(&dlogits, &trace.v_dropped);

    let dv_dropped = params.w_o.t().dot(&dlogits);
    let dv = &dv_dropped * &trace.drop_factor;
    let dc_pre = &dv * &trace.relu_active;
    grads.w_c = outer(&dc_pre, &trace.concat);

    let dconcat = params.w_c.t().dot(&dc_pre);
    let dh_multi = dconcat.slice(s![..d.d_h]).to_owned();
    let dz_prime = dconcat.slice(s![d.d_h..]).to_owned();

    let da = &dz_prime * &trace.z_prime.mapv(|z| 1.0 - z * z);
    grads.w_z = outer(&da, &bag.z);

    // Views share the upstream signal dh_multi / K; per instance the weight
    // w_i = mask_i * p_i scales both branch gradients.
    let w = (&bag.mask * &bag.p).insert_axis(Axis(1));
    let dh_k = dh_multi / d.k as f64;
    let dh_row = dh_k.view().insert_axis(Axis(0));
    for k in 0..d.k {
        let g = &trace.gate[k];
        let t = &trace.feat[k];
        let du = &(&(t * &g.mapv(|x| x * (1.0 - x))) * &w) * &dh_row;
        grads.w_g[k] = du.t().dot(&bag.x);
        let dt = &(&(g * &t.mapv(|x| 1.0 - x * x)) * &w) * &dh_row;
        grads.w_f[k] = dt.t().dot(&bag.x);
    }
    grads
}

//! The multi-view gated attention classifier, implemented directly: forward
//! pass, exact reverse-mode gradients for the fixed graph, Adam, a linear
//! learning-rate decay, dropout on the fused representation, and early
//! stopping on validation loss. No autodiff framework and no bias terms
//! anywhere; the computation is
//!
//!   per view k:  h_i = sigmoid(W_g x_i) * tanh(W_f x_i) * p_i
//!                h^(k) = sum over real instances of h_i
//!   h_multi = mean over views of h^(k)
//!   z' = tanh(W_z z)
//!   v = relu(W_c [h_multi ; z'])      (dropout here during training)
//!   probs = softmax(W_o v)

mod backward;
mod forward;
mod train;

pub use backward::{backward, Gradients};
pub use forward::{forward, loss, predict, softmax, Dropout, Forward, Trace};
pub use train::{
    accuracy, learning_rate, mean_loss, train, train_with, write_history_csv, Adam, EarlyStopping,
    EpochStats, StopDecision, TrainConfig,
};

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: u32 },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("checkpoint {path}: {msg}")]
    BadCheckpoint { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Model dimensions. Defaults follow the reference configuration:
/// 384-dimensional embeddings, 128 hidden units, 4 views, 10 classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub d_e: usize,
    pub d_h: usize,
    pub k: usize,
    pub c: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d_e: 384,
            d_h: 128,
            k: 4,
            c: 10,
        }
    }
}

/// All learnable parameters. Every matrix maps right-to-left (rows index the
/// output space), so W_g is (d_h, d_e) and W_o is (c, d_h).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub w_g: Vec<Array2<f64>>,
    pub w_f: Vec<Array2<f64>>,
    pub w_z: Array2<f64>,
    pub w_c: Array2<f64>,
    pub w_o: Array2<f64>,
}

impl ModelParams {
    /// All-zero parameters (useful mostly for tests: zero weights force a
    /// uniform output distribution).
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

    /// Seeded Glorot-uniform initialization: each matrix is sampled from
    /// U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |rows: usize, cols: usize| -> Array2<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).unwrap();
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let mut w_g = Vec::with_capacity(dims.k);
        let mut w_f = Vec::with_capacity(dims.k);
        for _ in 0..dims.k {
            w_g.push(sample(dims.d_h, dims.d_e));
            w_f.push(sample(dims.d_h, dims.d_e));
        }
        let w_z = sample(dims.d_h, dims.d_e);
        let w_c = sample(dims.d_h, 2 * dims.d_h);
        let w_o = sample(dims.c, dims.d_h);
        Self {
            dims,
            w_g,
            w_f,
            w_z,
            w_c,
            w_o,
        }
    }

    /// Matrices in checkpoint order: (W_g, W_f) per view, then W_z, W_c, W_o.
    pub(crate) fn matrices(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::with_capacity(2 * self.dims.k + 3);
        for k in 0..self.dims.k {
            out.push(&self.w_g[k]);
            out.push(&self.w_f[k]);
        }
        out.push(&self.w_z);
        out.push(&self.w_c);
        out.push(&self.w_o);
        out
    }

    pub(crate) fn matrices_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::with_capacity(2 * self.dims.k + 3);
        for (g, f) in self.w_g.iter_mut().zip(self.w_f.iter_mut()) {
            out.push(g);
            out.push(f);
        }
        out.push(&mut self.w_z);
        out.push(&mut self.w_c);
        out.push(&mut self.w_o);
        out
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"CGML";
const CHECKPOINT_VERSION: u32 = 1;

/// Save parameters: magic, version, d_e/d_h/k/c as u32, seed u64, epoch u32,
/// then every matrix row-major as little-endian f32 in [`ModelParams::matrices`]
/// order.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    seed: u64,
    epoch: u32,
) -> Result<(), ModelError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for dim in [params.dims.d_e, params.dims.d_h, params.dims.k, params.dims.c] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&epoch.to_le_bytes())?;
    for matrix in params.matrices() {
        for &value in matrix.iter() {
            w.write_all(&(value as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64, u32), ModelError> {
    let bad = |msg: &str| ModelError::BadCheckpoint {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32, ModelError> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    if read_u32(&mut r)? != CHECKPOINT_VERSION {
        return Err(bad("unsupported version"));
    }
    let dims = Dims {
        d_e: read_u32(&mut r)? as usize,
        d_h: read_u32(&mut r)? as usize,
        k: read_u32(&mut r)? as usize,
        c: read_u32(&mut r)? as usize,
    };
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    let epoch = read_u32(&mut r)?;

    let mut params = ModelParams::zeros(dims);
    let mut f32buf = [0u8; 4];
    for matrix in params.matrices_mut() {
        for value in matrix.iter_mut() {
            r.read_exact(&mut f32buf)?;
            *value = f32::from_le_bytes(f32buf) as f64;
        }
    }
    Ok((params, seed, epoch))
}

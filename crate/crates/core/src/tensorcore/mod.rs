//! Minimal differentiable numerics for the learning agents.
//!
//! There is no tape: every op has an explicit forward and backward function and
//! callers chain them by hand. Everything is `f64` and row-major.

mod gradcheck;
mod ops;
mod params;

pub use gradcheck::{finite_diff_check, Coordinates};
pub use ops::{
    categorical_backward, dense_backward, dense_forward, embed, embed_backward, lstm_backward_seq,
    lstm_forward_seq, lstm_step, lstm_step_backward, softmax, softmax_categorical, Activation, Categorical,
    CategoricalSample, LstmGrads, LstmStepCache, LstmWeights,
};
pub use params::{
    load_checkpoint, save_checkpoint, uniform_init, AdamConfig, AdamState, ParamId, ParamStore, CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(mismatch(
                "from_vec",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; 1 for vectors.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(mismatch(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally wide row blocks vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(mismatch("vstack", format!("{} vs {} columns", p.cols(), cols)));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }
}

/// `c ← alpha · op(a) · op(b) + beta · c` for row-major matrices, where
/// `op(x)` transposes when the flag is set. `a` is stored `ar × ac`, `b` is `br × bc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    alpha: f64,
    a: &[f64],
    (ar, ac): (usize, usize),
    trans_a: bool,
    b: &[f64],
    (br, bc): (usize, usize),
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(a.len(), ar * ac);
    assert_eq!(b.len(), br * bc);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
    // SAFETY: the asserts above pin every slice length to the dimensions and
    // strides handed to dgemm, so all accessed offsets are in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a · b` for 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.cols() != b.rows() {
        return Err(mismatch(
            "matmul",
            format!("{}x{} · {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
    gemm(
        1.0,
        &a.data,
        (a.rows(), a.cols()),
        false,
        &b.data,
        (b.rows(), b.cols()),
        false,
        0.0,
        &mut out.data,
    );
    Ok(out)
}

//! Dense f64 tensors with reverse-mode autodiff and an Adam optimizer.
//!
//! Just enough machinery for a tiny autoregressive policy: row-major tensors,
//! a flat recording tape whose nodes hold whole matrices (not scalars), and a
//! bias-corrected adaptive-moment update. Everything is 64-bit; gradient
//! checks against central finite differences are part of the public surface.

mod adam;
mod tape;

pub use adam::{adam_step, AdamConfig, OptimState};
pub(crate) use tape::gelu;
pub use tape::{Gradients, Tape, Unary, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("index {index} out of bounds for axis of size {size} in {op}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("finite_diff_check: epsilon {0} outside [1e-7, 1e-3]")]
    BadEpsilon(f64),
    #[error("finite_diff_check: loss is non-finite")]
    NonFiniteLoss,
}

pub type Result<T> = std::result::Result<T, NumericError>;

/// Row-major dense tensor of f64. Immutable once recorded on a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericError::LengthMismatch {
                op: "Tensor::new",
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite { op: "Tensor::new" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// (rows, cols) of a 2-D tensor; 1-D tensors are treated as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            2 => (self.shape[0], self.shape[1]),
            1 => (1, self.shape[0]),
            _ => panic!("dims2 on shape {:?}", self.shape),
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Max relative error between an analytic gradient and central finite
/// differences of `loss` at `params`.
///
/// rel err per coordinate = |analytic − numeric| / (|analytic| + |numeric| + 1e-12).
pub fn finite_diff_check(
    params: &[f64],
    analytic_grad: &[f64],
    epsilon: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(NumericError::BadEpsilon(epsilon));
    }
    assert_eq!(params.len(), analytic_grad.len());
    let mut work = params.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + epsilon;
        let lp = loss(&work);
        work[i] = orig - epsilon;
        let lm = loss(&work);
        work[i] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(NumericError::NonFiniteLoss);
        }
        let numeric = (lp - lm) / (2.0 * epsilon);
        let analytic = analytic_grad[i];
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

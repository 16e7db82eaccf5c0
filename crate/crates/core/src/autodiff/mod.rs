//! Reverse-mode automatic differentiation on a flat tape.
//!
//! The tape owns every intermediate value; operations push a node with a
//! backward closure. Values are `ArrayD` over a scalar type so the same
//! graph code runs in f32 for training and in f64 for gradient checking.

mod grad_check;
mod lstm;
mod tape;

pub use grad_check::{grad_check, GradCheckError, GradCheckReport};
pub use tape::{Grads, Tape, Var};

use ndarray::Array2;
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type for tape values: f32 for training, f64 for checking.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn fl(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn fl(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn fl(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("sinusoidal positional encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(String),
}

/// Standard sinusoidal positional encoding: `PE[pos, 2i] = sin(pos / 10000^(2i/H))`,
/// `PE[pos, 2i+1] = cos(...)`. `dim` must be even.
pub fn sinusoidal_positions<F: Scalar>(len: usize, dim: usize) -> Result<Array2<F>, AdError> {
    if dim % 2 != 0 {
        return Err(AdError::OddDimension(dim));
    }
    let mut pe = Array2::zeros((len, dim));
    for pos in 0..len {
        for i in 0..dim / 2 {
            let rate = 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 / rate;
            pe[[pos, 2 * i]] = F::fl(angle.sin());
            pe[[pos, 2 * i + 1]] = F::fl(angle.cos());
        }
    }
    Ok(pe)
}

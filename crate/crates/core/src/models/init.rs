//! Seeded parameter initialization: uniform Xavier for linear and
//! convolutional maps, orthogonal blocks for recurrent matrices, zero biases.

use crate::autodiff::Scalar;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn xavier_uniform<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> ArrayD<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values: Vec<F> = (0..fan_in * fan_out)
        .map(|_| F::fl(rng.random::<f64>() * 2.0 * limit - limit))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&[fan_in, fan_out]), values).expect("shape matches length")
}

pub fn zeros<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::ones(IxDyn(shape))
}

/// Four-lane dot product; the wide accumulators let the O(n^3)
/// orthogonalization below vectorize.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = a.chunks_exact(4).zip(b.chunks_exact(4));
    for (ca, cb) in &mut chunks {
        for l in 0..4 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut dot = acc.iter().sum::<f64>();
    let (ra, rb) = (a.chunks_exact(4).remainder(), b.chunks_exact(4).remainder());
    for (x, y) in ra.iter().zip(rb) {
        dot += x * y;
    }
    dot
}

/// Orthogonalize a random square Gaussian matrix by modified Gram-Schmidt.
fn orthogonal_square(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..n {
        let (prev, rest) = m.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &prev[j * n..j * n + n];
            let dot = dot4(row_i, row_j);
            for k in 0..n {
                row_i[k] -= dot * row_j[k];
            }
        }
        let norm = dot4(row_i, row_i).sqrt();
        for k in 0..n {
            row_i[k] /= norm;
        }
    }
    Array2::from_shape_vec((n, n), m).expect("shape matches length")
}

/// Recurrent weight [H, 4H]: four independent orthogonal H x H gate blocks.
pub fn orthogonal_gates<F: Scalar>(rng: &mut ChaCha8Rng, hidden: usize) -> ArrayD<F> {
    let mut w = vec![F::zero(); hidden * 4 * hidden];
    for gate in 0..4 {
        let q = orthogonal_square(rng, hidden);
        for i in 0..hidden {
            for j in 0..hidden {
                w[i * 4 * hidden + gate * hidden + j] = F::fl(q[[i, j]]);
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[hidden, 4 * hidden]), w).expect("shape matches length")
}

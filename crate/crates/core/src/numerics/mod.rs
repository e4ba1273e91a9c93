//! Dense linear algebra, small feed-forward networks with exact backward
//! passes, finite-difference gradient checking and seeded random streams.

mod gradcheck;
mod matrix;
mod mlp;
mod rng;

pub use gradcheck::fd_check;
pub use matrix::{dot, Matrix};
pub use mlp::{sigmoid, Activation, ForwardCache, GradBuffer, MlpParams};
pub use rng::{RngStream, StreamId};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat, index-addressable view over a parameter (or gradient) container.
///
/// Indices enumerate every scalar exactly once in a fixed order, so a
/// parameter container and its gradient buffer line up entry by entry.
pub trait FlatParams<T> {
    fn flat_len(&self) -> usize;
    fn flat_get(&self, k: usize) -> T;
    fn flat_set(&mut self, k: usize, v: T);

    fn to_flat_vec(&self) -> Vec<T> {
        (0..self.flat_len()).map(|k| self.flat_get(k)).collect()
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(raw: &[T]) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("softmax input contains non-finite values"));
    }
    let max = raw.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = raw.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::of(xs.len() as f64)
}

/// Per-coordinate mean and population variance of equal-length rows.
pub fn column_mean_var<T: Scalar>(rows: &[Vec<T>]) -> (Vec<T>, Vec<T>) {
    let n = T::of(rows.len() as f64);
    let d = rows.first().map_or(0, Vec::len);
    let mut mu = vec![T::zero(); d];
    for r in rows {
        for (m, &v) in mu.iter_mut().zip(r) {
            *m = *m + v;
        }
    }
    for m in &mut mu {
        *m = *m / n;
    }
    let mut var = vec![T::zero(); d];
    for r in rows {
        for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mu) {
            let dv = v - m;
            *s = *s + dv * dv;
        }
    }
    for s in &mut var {
        *s = *s / n;
    }
    (mu, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax(&[0.0f64; 4]).unwrap();
        assert!(s.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_of_ln2_and_zero() {
        let s = softmax(&[2.0f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_does_not_overflow() {
        assert_eq!(softmax(&[1000.0f64, 1000.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax::<f64>(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn population_variance() {
        let rows = vec![vec![1.0f64, 2.0], vec![3.0, 2.0]];
        let (m, v) = column_mean_var(&rows);
        assert_eq!(m, vec![2.0, 2.0]);
        assert_eq!(v, vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            raw in prop::collection::vec(-50.0f64..50.0, 1..40),
            shift in -100.0f64..100.0,
        ) {
            let s = softmax(&raw).unwrap();
            let total: f64 = s.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&v| v > 0.0 && v <= 1.0));
            let shifted: Vec<f64> = raw.iter().map(|v| v + shift).collect();
            let t = softmax(&shifted).unwrap();
            for (a, b) in s.iter().zip(&t) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

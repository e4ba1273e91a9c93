use super::FlatParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient check.
///
/// Returns `max_k |analytic_k - fd_k| / (|fd_k| + 1e-12)` where `fd_k` is the
/// centered difference of `f` along parameter `k` with the given step.
pub fn fd_check<T, P, G, F>(f: F, params: &P, analytic: &G, step: T) -> Result<T>
where
    T: Scalar,
    P: FlatParams<T> + Clone,
    G: FlatParams<T>,
    F: Fn(&P) -> Result<T>,
{
    if !(step > T::zero()) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    if params.flat_len() != analytic.flat_len() {
        return Err(Error::shape(format!(
            "parameters have {} entries, analytic gradient has {}",
            params.flat_len(),
            analytic.flat_len()
        )));
    }
    let two = T::of(2.0);
    let floor = T::of(1e-12);
    let mut probe = params.clone();
    let mut worst = T::zero();
    for k in 0..params.flat_len() {
        let orig = params.flat_get(k);
        probe.flat_set(k, orig + step);
        let up = f(&probe)?;
        probe.flat_set(k, orig - step);
        let down = f(&probe)?;
        probe.flat_set(k, orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!(
                "objective is not finite when perturbing parameter {k}"
            )));
        }
        let fd = (up - down) / (two * step);
        let rel = (analytic.flat_get(k) - fd).abs() / (fd.abs() + floor);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

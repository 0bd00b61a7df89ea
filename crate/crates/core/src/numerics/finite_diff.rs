use super::Scalar;
use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `objective(θ)` returns the loss and its analytic gradient at `θ`. The
/// gradient is taken once at `params`; each coordinate is then probed at
/// `θ ± step·eᵢ`. Returns `maxᵢ |analytic − numeric| / (|numeric| + 1e-12)`.
pub fn finite_diff_check<T, F>(mut objective: F, params: &[T], step: T) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    if !(step > T::zero()) {
        return Err(Error::invalid("step", "must be positive"));
    }
    let (loss, analytic) = objective(params);
    if !loss.is_finite() {
        return Err(Error::NonFinite("finite_diff_check loss"));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} params", params.len()),
            format!("{} gradient entries", analytic.len()),
        ));
    }
    let mut probe = params.to_vec();
    let mut worst = T::zero();
    let two = T::lit(2.0);
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let (up, _) = objective(&probe);
        probe[i] = params[i] - step;
        let (down, _) = objective(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite_diff_check probe"));
        }
        let numeric = (up - down) / (two * step);
        let err = (analytic[i] - numeric).abs() / (numeric.abs() + T::lit(1e-12));
        worst = worst.max(err);
    }
    Ok(worst)
}

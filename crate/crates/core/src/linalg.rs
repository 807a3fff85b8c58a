//! Shared dense linear-algebra helpers: SPD solves with a one-time jitter
//! fallback, condition estimates for error reports, and the energy rule used
//! to truncate singular spectra.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{DsiError, Result};
use crate::scalar::Scalar;

/// Relative jitter added to the diagonal when a Cholesky factorization fails.
pub const CHOLESKY_JITTER_REL: f64 = 1e-10;

/// Cholesky factorization of an SPD matrix, retrying once with diagonal
/// jitter `1e-10 * trace / n` before failing with a condition-number report.
pub fn cholesky_with_jitter<S: Scalar>(m: &DMatrix<S>) -> Result<Cholesky<S, Dyn>> {
    debug_assert_eq!(m.nrows(), m.ncols());
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let n = m.nrows();
    let jitter = S::of_f64(CHOLESKY_JITTER_REL) * m.trace() / S::of_f64(n as f64);
    let mut jittered = m.clone();
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| {
        DsiError::numerical(format!(
            "Cholesky failed for {n}x{n} matrix even with diagonal jitter \
             (condition estimate {:.3e})",
            condition_estimate(m)
        ))
    })
}

/// Solves `m x = rhs` for SPD `m` through [`cholesky_with_jitter`].
pub fn solve_spd<S: Scalar>(m: &DMatrix<S>, rhs: &DMatrix<S>) -> Result<DMatrix<S>> {
    Ok(cholesky_with_jitter(m)?.solve(rhs))
}

/// Two-norm condition estimate from the singular spectrum.
pub fn condition_estimate<S: Scalar>(m: &DMatrix<S>) -> f64 {
    let svals = m.clone().svd(false, false).singular_values;
    let max = svals.iter().map(|s| s.as_f64()).fold(0.0f64, f64::max);
    let min = svals.iter().map(|s| s.as_f64()).fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest `k` such that the leading `k` squared singular values hold at
/// least `energy` of the total squared spectrum.
///
/// `svals` must be in descending order. `energy = 1.0` returns the numerical
/// rank (singular values above `n * eps * sigma_1`), so trailing round-off
/// noise does not inflate the basis.
pub fn energy_rank<S: Scalar>(svals: &[S], energy: f64) -> Result<usize> {
    if svals.is_empty() {
        return Err(DsiError::config("energy rank of an empty spectrum"));
    }
    if !(0.0 < energy && energy <= 1.0) {
        return Err(DsiError::config(format!(
            "energy fraction {energy} outside (0, 1]"
        )));
    }
    let s: Vec<f64> = svals.iter().map(|v| v.as_f64()).collect();
    if s.windows(2).any(|w| w[0] < w[1]) {
        return Err(DsiError::numerical(
            "singular values not in descending order".to_string(),
        ));
    }
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(DsiError::numerical(
            "degenerate spectrum: total energy is zero or non-finite".to_string(),
        ));
    }
    if energy >= 1.0 {
        let tol = s[0] * s.len() as f64 * f64::EPSILON;
        return Ok(s.iter().filter(|&&v| v > tol).count().max(1));
    }
    let mut cum = 0.0;
    for (k, v) in s.iter().enumerate() {
        cum += v * v;
        if cum / total >= energy {
            return Ok(k + 1);
        }
    }
    Ok(s.len())
}

//! Small statistical helpers shared by the transformation and diagnostic
//! modules: empirical quantiles, the normal CDF, and Kolmogorov-Smirnov
//! statistics.

use crate::error::{DsiError, Result};
use crate::scalar::Scalar;

/// Sorts a slice of scalars ascending.
///
/// Panics on non-finite values; callers filter null markers first.
pub fn sort_scalars<S: Scalar>(values: &mut [S]) {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value in sort"));
}

/// Empirical quantile of pre-sorted `sorted` at probability `p` in [0, 1].
///
/// Sample `i` (1-indexed) sits at plotting position `(i - 1) / (N - 1)`;
/// probabilities between positions interpolate linearly and the result is
/// clamped to the sample range. A single sample is returned for every `p`.
pub fn empirical_quantile<S: Scalar>(sorted: &[S], p: f64) -> Result<S> {
    if sorted.is_empty() {
        return Err(DsiError::config("empirical quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(DsiError::config(format!(
            "quantile probability {p} outside [0, 1]"
        )));
    }
    let n = sorted.len();
    if n == 1 {
        return Ok(sorted[0]);
    }
    let pos = p * (n - 1) as f64;
    let i0 = pos.floor() as usize;
    if i0 >= n - 1 {
        return Ok(sorted[n - 1]);
    }
    let w = S::of_f64(pos - i0 as f64);
    Ok(sorted[i0] + w * (sorted[i0 + 1] - sorted[i0]))
}

/// CDF of N(mean, std^2) at `x`.
pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    debug_assert!(std > 0.0);
    let z = (x - mean) / (std * std::f64::consts::SQRT_2);
    0.5 * (1.0 + statrs::function::erf::erf(z))
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_one_sample<S: Scalar>(samples: &[S], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(DsiError::config("KS statistic of an empty sample"));
    }
    let mut sorted = samples.to_vec();
    sort_scalars(&mut sorted);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x.as_f64());
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov statistic between `a` and `b`.
///
/// Ties are resolved by advancing both empirical CDFs past every equal value
/// before the difference is evaluated.
pub fn ks_two_sample<S: Scalar>(a: &[S], b: &[S]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(DsiError::config("KS statistic of an empty sample"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sort_scalars(&mut sa);
    sort_scalars(&mut sb);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = if sa[i] <= sb[j] { sa[i] } else { sb[j] };
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Mean and unbiased variance of a slice, in `f64`.
pub fn mean_variance<S: Scalar>(values: &[S]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = values
        .iter()
        .map(|v| {
            let d = v.as_f64() - mean;
            d * d
        })
        .sum::<f64>();
    (mean, ss / (n - 1) as f64)
}

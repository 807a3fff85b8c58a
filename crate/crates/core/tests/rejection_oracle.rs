//! Rejection sampling against a known 1-D posterior: uniform prior samples
//! scored by a Gaussian likelihood must reproduce the (truncated) Gaussian.

use nalgebra::DMatrix;

use dsi_core::data::{DataSchema, Ensemble, ObservationSet};
use dsi_core::rejection::rejection_sample;
use dsi_core::rng::{self, DsiRng};
use dsi_core::stats::{ks_one_sample, normal_cdf, sort_scalars};

#[test]
fn one_dimensional_posterior_recovered_within_ks_tolerance() {
    let y = 2.0;
    let sigma = 0.7;
    let (lo, hi) = (y - 5.0 * sigma, y + 5.0 * sigma);
    let n = 10_000;

    let schema = DataSchema::new(vec!["q".into()], vec![1.0]).unwrap();
    let mut draw = DsiRng::from_seed(271828);
    let members: Vec<DMatrix<f64>> = (0..n)
        .map(|_| DMatrix::from_element(1, 1, rng::uniform(&mut draw, lo, hi)))
        .collect();
    let e = Ensemble::new(schema, members).unwrap();
    let obs = ObservationSet::new(vec![(0, 0)], vec![y], vec![sigma]).unwrap();

    let rs = rejection_sample(&e, &obs, &DsiRng::from_seed(628318)).unwrap();
    assert!(
        rs.n_accepted() > 1_000,
        "unexpectedly few acceptances: {}",
        rs.n_accepted()
    );

    let mut samples: Vec<f64> = rs.accepted.iter().map(|&i| e.member_values(i)[(0, 0)]).collect();
    sort_scalars(&mut samples);
    // Posterior over a uniform prior window is the normal truncated to it.
    let z_lo = normal_cdf(lo, y, sigma);
    let z_hi = normal_cdf(hi, y, sigma);
    let cdf = move |x: f64| (normal_cdf(x, y, sigma) - z_lo) / (z_hi - z_lo);
    let ks = ks_one_sample(&samples, cdf).unwrap();
    assert!(ks <= 0.05, "KS against analytic posterior: {ks:.4}");
}

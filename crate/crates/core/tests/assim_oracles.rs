//! Oracle tests for the posterior samplers on problems with known answers:
//! the analytic Gaussian posterior of a linear model, and spread reduction
//! on seeded tank data.

use nalgebra::{Cholesky, DMatrix, DVector};

use dsi_core::assim::{
    esmda_update_data, rml_sample, EsmdaConfig, LatentEnsemble, ParamTag, RmlConfig,
};
use dsi_core::data::{DataSchema, Ensemble, ObservationSet};
use dsi_core::pcaht::{pca_decode, PcaBasis};
use dsi_core::rng::DsiRng;
use dsi_core::stats::{empirical_quantile, sort_scalars};
use dsi_core::synth::{
    analytic_linear_posterior, linear_prior_ensemble, tank_ensemble, LinearGaussianModel,
    TankPriorConfig,
};

fn schema_2x4() -> DataSchema {
    DataSchema::new(vec!["A".into(), "B".into()], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
}

/// Rank-4 linear model over an 8-component data vector.
fn linear_model() -> LinearGaussianModel<f64> {
    let g = DMatrix::from_row_slice(
        8,
        4,
        &[
            1.0, 0.2, -0.3, 0.5, //
            0.8, 0.5, 0.1, -0.2, //
            0.4, 1.1, 0.3, 0.3, //
            -0.2, 0.7, 0.9, 0.1, //
            0.6, -0.4, 1.2, 0.4, //
            0.9, 0.1, 0.5, 1.0, //
            0.3, 0.8, -0.6, 1.3, //
            0.5, 0.5, 0.5, 0.6,
        ],
    );
    let prior_mean = DVector::from_column_slice(&[5.0, -2.0, 1.0, 3.0]);
    let prior_cov = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.3, 0.0, 0.1, //
            0.3, 0.8, 0.2, 0.0, //
            0.0, 0.2, 0.5, 0.1, //
            0.1, 0.0, 0.1, 0.9,
        ],
    );
    LinearGaussianModel::new(schema_2x4(), g, prior_mean, prior_cov).unwrap()
}

fn observations() -> ObservationSet<f64> {
    ObservationSet::new(
        vec![(0, 1), (0, 3), (1, 2)],
        vec![6.0, 3.0, 2.0],
        vec![0.5, 0.5, 0.5],
    )
    .unwrap()
}

fn ensemble_mean_flat(e: &Ensemble<f64>) -> DVector<f64> {
    e.flat_matrix().column_mean()
}

fn ensemble_var_flat(e: &Ensemble<f64>) -> DVector<f64> {
    let flat = e.flat_matrix();
    let mean = flat.column_mean();
    let n = flat.ncols();
    DVector::from_fn(flat.nrows(), |j, _| {
        flat.row(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64
    })
}

#[test]
fn esmda_matches_kalman_posterior_on_linear_gaussian_problem() {
    let model = linear_model();
    let obs = observations();
    let (mean_an, cov_an) = analytic_linear_posterior(&model, &obs).unwrap();

    for (n_a, prior_seed, update_seed) in [(1usize, 101u64, 7u64), (4, 101, 8)] {
        let prior = linear_prior_ensemble(&model, 2000, &DsiRng::from_seed(prior_seed)).unwrap();
        let out = esmda_update_data(&prior, &obs, &EsmdaConfig::new(n_a, update_seed)).unwrap();

        let mean = ensemble_mean_flat(&out.posterior);
        let rel = (&mean - &mean_an).norm() / mean_an.norm();
        assert!(rel <= 0.05, "N_a={n_a}: posterior mean off by {rel:.4} relative L2");

        let var = ensemble_var_flat(&out.posterior);
        for j in 0..var.len() {
            let rel_v = (var[j] - cov_an[(j, j)]).abs() / cov_an[(j, j)];
            assert!(
                rel_v <= 0.15,
                "N_a={n_a}: variance of component {j} off by {rel_v:.4} \
                 (ensemble {:.4}, analytic {:.4})",
                var[j],
                cov_an[(j, j)]
            );
        }

        let m = &out.mean_mismatch;
        assert_eq!(m.len(), n_a + 1);
        assert!(m[n_a] < m[0], "N_a={n_a}: mismatch did not decrease: {m:?}");
    }
}

/// Orthogonal 8x3 linear decoder with component scales 2, 1, 0.5.
fn linear_decoder() -> PcaBasis<f64> {
    let r8 = 8f64.sqrt().recip();
    let u1 = [r8; 8];
    let u2 = [r8, r8, r8, r8, -r8, -r8, -r8, -r8];
    let u3 = [r8, -r8, r8, -r8, r8, -r8, r8, -r8];
    let mut phi = DMatrix::zeros(8, 3);
    for j in 0..8 {
        phi[(j, 0)] = 2.0 * u1[j];
        phi[(j, 1)] = 1.0 * u2[j];
        phi[(j, 2)] = 0.5 * u3[j];
    }
    let mean = DVector::from_column_slice(&[4.0, 5.0, 6.0, 7.0, 8.0, 7.0, 6.0, 5.0]);
    PcaBasis::from_parts(schema_2x4(), mean, phi, vec![2.0, 1.0, 0.5]).unwrap()
}

#[test]
fn rml_sample_mean_matches_analytic_posterior_mean() {
    let basis = linear_decoder();
    let sigma = 0.4;
    let obs = ObservationSet::new(
        vec![(0, 0), (0, 2), (1, 1)],
        vec![5.2, 7.0, 6.5],
        vec![sigma, sigma, sigma],
    )
    .unwrap();

    // Posterior of xi ~ N(0, I) observed through rows R of the decoder:
    // mean solves (Phi_R^T Phi_R / sigma^2 + I) m = Phi_R^T (y - mean_R) / sigma^2.
    let rows = [0usize, 2, 5];
    let mut phi_r = DMatrix::zeros(3, 3);
    let mut resid = DVector::zeros(3);
    for (k, &r) in rows.iter().enumerate() {
        for c in 0..3 {
            phi_r[(k, c)] = basis.phi()[(r, c)];
        }
        resid[k] = obs.values()[k] - basis.mean()[r];
    }
    let a = phi_r.transpose() * &phi_r / (sigma * sigma) + DMatrix::identity(3, 3);
    let b = phi_r.transpose() * resid / (sigma * sigma);
    let m_xi = Cholesky::new(a).unwrap().solve(&b);
    let mean_an = basis.phi() * &m_xi + basis.mean();

    let le = LatentEnsemble::new(DMatrix::zeros(3, 2), ParamTag::Pca).unwrap();
    let rng = DsiRng::from_seed(2024);
    let cfg = RmlConfig::default();
    let n_samples = 200;
    let mut acc = DVector::zeros(8);
    for i in 0..n_samples {
        let xi = rml_sample(&le, &basis, &obs, &rng.child(i), &cfg).unwrap();
        acc += pca_decode(&basis, &xi).unwrap().flat();
    }
    acc /= n_samples as f64;
    let rel = (&acc - &mean_an).norm() / mean_an.norm();
    assert!(rel <= 0.10, "RML sample mean off by {rel:.4} relative L2");
}

#[test]
fn esmda_shrinks_spread_at_observed_tank_entries() {
    let cfg = TankPriorConfig::default_2d();
    let times: Vec<f64> = (1..=25).map(|k| 120.0 * k as f64).collect();
    let rng = DsiRng::from_seed(31415);
    let prior: Ensemble<f64> = tank_ensemble(&cfg, &times, 200, &rng).unwrap();

    // Truth from a substream far outside the ensemble's member streams.
    let truth = tank_ensemble(&cfg, &times, 1, &rng.child(1_000_000)).unwrap().member(0);
    let entries: Vec<(usize, usize)> = [0usize, 2, 3, 4]
        .iter()
        .flat_map(|&q| [1usize, 3, 5].iter().map(move |&t| (q, t)))
        .collect();
    let values: Vec<f64> = entries.iter().map(|&(q, t)| truth.value(q, t)).collect();
    let error_std: Vec<f64> = values.iter().map(|v| 0.1 * v.abs()).collect();
    let obs = ObservationSet::new(entries.clone(), values, error_std).unwrap();

    let out = esmda_update_data(&prior, &obs, &EsmdaConfig::new(4, 99)).unwrap();

    let band = |e: &Ensemble<f64>, q: usize, t: usize| -> f64 {
        let mut vals: Vec<f64> = e.iter_members().map(|m| m[(q, t)]).collect();
        sort_scalars(&mut vals);
        empirical_quantile(&vals, 0.9).unwrap() - empirical_quantile(&vals, 0.1).unwrap()
    };
    for &(q, t) in &entries {
        let ratio = band(&out.posterior, q, t) / band(&prior, q, t);
        assert!(ratio < 0.9, "P10-P90 width ratio {ratio:.3} at entry ({q}, {t})");
    }
}

//! Posterior sampling: ESMDA on data vectors, ESMDA on latent variables
//! through a decoder, randomized maximum likelihood on latent variables,
//! and truncation post-processing.
//!
//! One update iteration computes cross-covariances from the current
//! ensemble, then moves every member with the same gain applied to its own
//! perturbed innovation. Per-member noise comes from dedicated substreams,
//! so results are independent of evaluation order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{select_hm_matrix, DataSchema, DataVector, Ensemble, ObservationSet};
use crate::error::{DsiError, Result};
use crate::linalg::cholesky_with_jitter;
use crate::pcaht::{apply_ht, pca_decode, MarginalCdfTable, PcaBasis};
use crate::rae::{rae_decode, rae_decode_matrix, RaeWeights};
use crate::rng::{self, DsiRng};
use crate::scalar::Scalar;

/// Slack allowed on the sum of inverse inflation factors.
pub const ALPHA_SUM_TOL: f64 = 1e-10;

/// Uniform inflation schedule: alpha_k = N_a for every iteration, which
/// satisfies sum 1/alpha_k = 1 exactly.
pub fn default_alphas(n_a: usize) -> Vec<f64> {
    vec![n_a as f64; n_a]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsmdaConfig {
    /// Error-covariance inflation per iteration; the inverses must sum to 1.
    pub alphas: Vec<f64>,
    /// Seed of the perturbation generator.
    pub seed: u64,
    /// Substream id per member (must fit in 32 bits). Defaults to the member
    /// index; a permuted ensemble with equally permuted streams yields the
    /// identically permuted posterior.
    #[serde(default)]
    pub member_streams: Option<Vec<u64>>,
}

impl EsmdaConfig {
    pub fn new(n_a: usize, seed: u64) -> Self {
        Self { alphas: default_alphas(n_a), seed, member_streams: None }
    }

    pub fn n_a(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(DsiError::config("ESMDA needs at least one iteration"));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(DsiError::config("ESMDA inflation factors must be positive and finite"));
        }
        let inv_sum: f64 = self.alphas.iter().map(|a| 1.0 / a).sum();
        if (inv_sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(DsiError::config(format!(
                "sum of 1/alpha_k must be 1, got {inv_sum:.12} for alphas {:?}",
                self.alphas
            )));
        }
        if let Some(streams) = &self.member_streams {
            if streams.iter().any(|s| *s > u32::MAX as u64) {
                return Err(DsiError::config("member stream ids must fit in 32 bits"));
            }
        }
        Ok(())
    }

    fn streams(&self, n_r: usize) -> Result<Vec<u64>> {
        match &self.member_streams {
            None => Ok((0..n_r as u64).collect()),
            Some(s) if s.len() == n_r => Ok(s.clone()),
            Some(s) => Err(DsiError::config(format!(
                "{} member streams provided for {n_r} members",
                s.len()
            ))),
        }
    }
}

/// Which parameterization produced a latent ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamTag {
    Pca,
    PcaHt,
    Rae,
    Identity,
}

impl std::fmt::Display for ParamTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParamTag::Pca => "pca",
            ParamTag::PcaHt => "pca_ht",
            ParamTag::Rae => "rae",
            ParamTag::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// Latent vectors of an ensemble, one member per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEnsemble<S: Scalar> {
    members: DMatrix<S>,
    tag: ParamTag,
}

impl<S: Scalar> LatentEnsemble<S> {
    pub fn new(members: DMatrix<S>, tag: ParamTag) -> Result<Self> {
        if members.ncols() == 0 || members.nrows() == 0 {
            return Err(DsiError::config("latent ensemble must be non-empty"));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(DsiError::numerical("latent ensemble contains non-finite entries"));
        }
        Ok(Self { members, tag })
    }

    pub fn n_members(&self) -> usize {
        self.members.ncols()
    }

    pub fn n_l(&self) -> usize {
        self.members.nrows()
    }

    pub fn tag(&self) -> ParamTag {
        self.tag
    }

    pub fn matrix(&self) -> &DMatrix<S> {
        &self.members
    }

    pub fn member(&self, i: usize) -> DVector<S> {
        self.members.column(i).into_owned()
    }
}

/// Decodes latent vectors back to data space. `decode_matrix` takes one
/// latent per column; implementations may batch it.
pub trait LatentDecoder<S: Scalar>: Sync {
    fn latent_dim(&self) -> usize;
    fn schema(&self) -> &DataSchema;
    fn tag(&self) -> ParamTag;
    fn decode(&self, xi: &DVector<S>) -> Result<DataVector<S>>;

    fn decode_matrix(&self, latents: &DMatrix<S>) -> Result<Ensemble<S>> {
        let members = (0..latents.ncols())
            .map(|i| {
                self.decode(&latents.column(i).into_owned())
                    .map(|d| d.values().clone())
                    .map_err(|e| DsiError::numerical(format!("decoding member {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(self.schema().clone(), members)
    }

    /// Observed components of the decoded vector, in entry order.
    fn decode_hm(&self, xi: &DVector<S>, obs: &ObservationSet<S>) -> Result<DVector<S>> {
        crate::data::select_hm(&self.decode(xi)?, obs)
    }
}

impl<S: Scalar> LatentDecoder<S> for PcaBasis<S> {
    fn latent_dim(&self) -> usize {
        self.n_l()
    }

    fn schema(&self) -> &DataSchema {
        PcaBasis::schema(self)
    }

    fn tag(&self) -> ParamTag {
        ParamTag::Pca
    }

    fn decode(&self, xi: &DVector<S>) -> Result<DataVector<S>> {
        pca_decode(self, xi)
    }
}

/// PCA basis followed by the per-component histogram transformation.
pub struct PcaHtDecoder<S: Scalar> {
    pub basis: PcaBasis<S>,
    pub table: MarginalCdfTable<S>,
}

impl<S: Scalar> LatentDecoder<S> for PcaHtDecoder<S> {
    fn latent_dim(&self) -> usize {
        self.basis.n_l()
    }

    fn schema(&self) -> &DataSchema {
        self.basis.schema()
    }

    fn tag(&self) -> ParamTag {
        ParamTag::PcaHt
    }

    fn decode(&self, xi: &DVector<S>) -> Result<DataVector<S>> {
        apply_ht(&self.table, &pca_decode(&self.basis, xi)?)
    }
}

impl<S: Scalar> LatentDecoder<S> for RaeWeights<S> {
    fn latent_dim(&self) -> usize {
        RaeWeights::latent_dim(self)
    }

    fn schema(&self) -> &DataSchema {
        RaeWeights::schema(self)
    }

    fn tag(&self) -> ParamTag {
        ParamTag::Rae
    }

    fn decode(&self, xi: &DVector<S>) -> Result<DataVector<S>> {
        rae_decode(self, xi)
    }

    fn decode_matrix(&self, latents: &DMatrix<S>) -> Result<Ensemble<S>> {
        rae_decode_matrix(self, latents)
    }
}

/// Trivial decoder for tests and the data-variant reduction: the latent
/// vector is the flattened data vector itself.
pub struct IdentityDecoder {
    pub schema: DataSchema,
}

impl<S: Scalar> LatentDecoder<S> for IdentityDecoder {
    fn latent_dim(&self) -> usize {
        self.schema.n_f()
    }

    fn schema(&self) -> &DataSchema {
        &self.schema
    }

    fn tag(&self) -> ParamTag {
        ParamTag::Identity
    }

    fn decode(&self, xi: &DVector<S>) -> Result<DataVector<S>> {
        DataVector::from_flat(self.schema.clone(), xi)
    }
}

/// Sample cross-covariance of two collections given column-wise:
/// (1/(N-1)) sum_i (a_i - a_bar)(b_i - b_bar)^T.
pub fn cross_cov<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> Result<DMatrix<S>> {
    let n = a.ncols();
    if n != b.ncols() {
        return Err(DsiError::config(format!(
            "cross-covariance needs equal sample counts, got {n} and {}",
            b.ncols()
        )));
    }
    if n < 2 {
        return Err(DsiError::config("cross-covariance needs at least two samples"));
    }
    let a_mean = a.column_mean();
    let b_mean = b.column_mean();
    let mut ac = a.clone();
    for mut col in ac.column_iter_mut() {
        col -= &a_mean;
    }
    let mut bc = b.clone();
    for mut col in bc.column_iter_mut() {
        col -= &b_mean;
    }
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    let bt = bc.transpose();
    out.gemm(S::one() / S::of_f64((n - 1) as f64), &ac, &bt, S::zero());
    Ok(out)
}

/// Posterior of the data-variant update plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct EsmdaData<S: Scalar> {
    pub posterior: Ensemble<S>,
    /// Mean over members of ||H d_i - d_obs||_2; index 0 is the prior, index
    /// k the state after k iterations.
    pub mean_mismatch: Vec<f64>,
}

/// Posterior of the latent-variant update.
#[derive(Debug, Clone)]
pub struct EsmdaLatent<S: Scalar> {
    pub posterior_latents: LatentEnsemble<S>,
    pub posterior: Ensemble<S>,
    pub mean_mismatch: Vec<f64>,
}

fn mean_mismatch<S: Scalar>(d_hm: &DMatrix<S>, d_obs: &DVector<S>) -> f64 {
    let n = d_hm.ncols();
    let mut acc = 0.0;
    for col in d_hm.column_iter() {
        let mut sq = 0.0;
        for (v, o) in col.iter().zip(d_obs.iter()) {
            let r = (*v - *o).as_f64();
            sq += r * r;
        }
        acc += sq.sqrt();
    }
    acc / n as f64
}

/// Shared ESMDA engine over an arbitrary state matrix (one member per
/// column) and a map from states to observed components.
fn esmda_engine<S: Scalar>(
    mut state: DMatrix<S>,
    predict_hm: &mut dyn FnMut(&DMatrix<S>) -> Result<DMatrix<S>>,
    obs: &ObservationSet<S>,
    cfg: &EsmdaConfig,
) -> Result<(DMatrix<S>, Vec<f64>)> {
    cfg.validate()?;
    let n_r = state.ncols();
    let streams = cfg.streams(n_r)?;
    let d_obs = obs.values();
    let sigma = obs.error_std();
    let n_hm = obs.n_hm();
    let rng = DsiRng::from_seed(cfg.seed);
    let mut mismatch = Vec::with_capacity(cfg.n_a() + 1);

    for (k, alpha) in cfg.alphas.iter().enumerate() {
        let d_hm = predict_hm(&state)?;
        mismatch.push(mean_mismatch(&d_hm, &d_obs));

        let c_s_dhm = cross_cov(&state, &d_hm)?;
        let mut innards = cross_cov(&d_hm, &d_hm)?;
        let alpha_s = S::of_f64(*alpha);
        for j in 0..n_hm {
            innards[(j, j)] += alpha_s * sigma[j] * sigma[j];
        }
        let chol = cholesky_with_jitter(&innards).map_err(|e| {
            DsiError::numerical(format!("ESMDA iteration {}: innovation matrix not factorizable: {e}", k + 1))
        })?;

        // Innovations: d_obs + sqrt(alpha) e_i - (d_hm)_i, with e_i ~ N(0, C_D)
        // drawn from substream (k, member stream i).
        let sqrt_alpha = S::of_f64(alpha.sqrt());
        let mut innov = DMatrix::zeros(n_hm, n_r);
        for i in 0..n_r {
            let mut member_rng = rng.stream(((k as u64) << 32) | streams[i]);
            for j in 0..n_hm {
                let e = sigma[j] * rng::standard_normal::<S>(&mut member_rng);
                innov[(j, i)] = d_obs[j] + sqrt_alpha * e - d_hm[(j, i)];
            }
        }
        let x = chol.solve(&innov);
        state.gemm(S::one(), &c_s_dhm, &x, S::one());
        if state.iter().any(|v| !v.is_finite()) {
            return Err(DsiError::numerical(format!("ESMDA iteration {} produced non-finite states", k + 1)));
        }
    }
    let d_hm = predict_hm(&state)?;
    mismatch.push(mean_mismatch(&d_hm, &d_obs));
    Ok((state, mismatch))
}

/// ESMDA directly on data vectors: for each iteration, members move by
/// C_{d,d_hm} (C_{d_hm} + alpha_k C_D)^{-1} applied to their perturbed
/// innovation. The first iteration uses the raw prior members.
pub fn esmda_update_data<S: Scalar>(
    e: &Ensemble<S>,
    obs: &ObservationSet<S>,
    cfg: &EsmdaConfig,
) -> Result<EsmdaData<S>> {
    obs.validate_against(e.schema())?;
    let schema = e.schema().clone();
    let flat = e.flat_matrix();
    let rows: Vec<usize> = obs.entries().iter().map(|&(q, t)| schema.flat_index(q, t)).collect();
    let mut predict = |state: &DMatrix<S>| -> Result<DMatrix<S>> {
        Ok(DMatrix::from_fn(rows.len(), state.ncols(), |j, i| state[(rows[j], i)]))
    };
    let (state, mean_mismatch) = esmda_engine(flat, &mut predict, obs, cfg)?;
    let posterior = Ensemble::from_flat_matrix(schema, &state)?;
    Ok(EsmdaData { posterior, mean_mismatch })
}

/// ESMDA on latent variables: per iteration the observed components are the
/// decoded members' selections, the update moves the latents, and the final
/// latents are decoded into the posterior ensemble.
pub fn esmda_update_latent<S: Scalar>(
    le: &LatentEnsemble<S>,
    decoder: &dyn LatentDecoder<S>,
    obs: &ObservationSet<S>,
    cfg: &EsmdaConfig,
) -> Result<EsmdaLatent<S>> {
    obs.validate_against(decoder.schema())?;
    if le.n_l() != decoder.latent_dim() {
        return Err(DsiError::schema(format!(
            "latent ensemble dimension {} does not match decoder latent dimension {}",
            le.n_l(),
            decoder.latent_dim()
        )));
    }
    let mut last_decoded: Option<Ensemble<S>> = None;
    let (state, mean_mismatch) = {
        let mut predict = |state: &DMatrix<S>| -> Result<DMatrix<S>> {
            let decoded = decoder.decode_matrix(state)?;
            let hm = select_hm_matrix(&decoded, obs)?;
            last_decoded = Some(decoded);
            Ok(hm)
        };
        esmda_engine(le.matrix().clone(), &mut predict, obs, cfg)?
    };
    let posterior = last_decoded.expect("final predict ran");
    let posterior_latents = LatentEnsemble::new(state, le.tag())?;
    Ok(EsmdaLatent { posterior_latents, posterior, mean_mismatch })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmlConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Central finite-difference step on the latent variables.
    pub fd_step: f64,
    /// ADAM learning rate for the minimization.
    pub learning_rate: f64,
}

impl Default for RmlConfig {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tolerance: 1e-6, fd_step: 1e-4, learning_rate: 0.05 }
    }
}

impl RmlConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations >= 1
            && self.gradient_tolerance > 0.0
            && self.fd_step > 0.0
            && self.learning_rate > 0.0;
        if !ok {
            return Err(DsiError::config("invalid RML optimizer configuration"));
        }
        Ok(())
    }
}

/// One randomized-maximum-likelihood posterior sample: draws perturbed data
/// d* ~ N(d_obs, C_D) (substream 0) and prior point xi* ~ N(0, I)
/// (substream 1), then minimizes
///   1/2 (H f(xi) - d*)^T C_D^{-1} (H f(xi) - d*) + 1/2 ||xi - xi*||^2
/// with ADAM on central finite-difference gradients, starting from xi*.
/// Returns the best iterate seen. With no observed entries this is exactly
/// xi*.
pub fn rml_sample<S: Scalar>(
    le_prior: &LatentEnsemble<S>,
    decoder: &dyn LatentDecoder<S>,
    obs: &ObservationSet<S>,
    rng: &DsiRng,
    cfg: &RmlConfig,
) -> Result<DVector<S>> {
    cfg.validate()?;
    obs.validate_against(decoder.schema())?;
    obs.require_positive_error()?;
    let n_l = decoder.latent_dim();
    if le_prior.n_l() != n_l {
        return Err(DsiError::schema(format!(
            "latent ensemble dimension {} does not match decoder latent dimension {n_l}",
            le_prior.n_l()
        )));
    }

    let perturbed = crate::data::perturb_observations(obs, &mut rng.stream(0));
    let d_star = perturbed.values();
    let sigma = obs.error_std();
    let mut xi_rng = rng.stream(1);
    let xi_star = DVector::from_fn(n_l, |_, _| rng::standard_normal::<S>(&mut xi_rng));

    let half = S::of_f64(0.5);
    let objective = |xi: &DVector<S>| -> Result<S> {
        let hm = decoder.decode_hm(xi, obs)?;
        let mut acc = S::zero();
        for j in 0..obs.n_hm() {
            let r = (hm[j] - d_star[j]) / sigma[j];
            acc += r * r;
        }
        let mut reg = S::zero();
        for p in 0..n_l {
            let d = xi[p] - xi_star[p];
            reg += d * d;
        }
        Ok(half * acc + half * reg)
    };

    if obs.n_hm() == 0 {
        return Ok(xi_star);
    }
    let mut xi = xi_star.clone();
    let mut best = xi.clone();
    let mut best_obj = objective(&xi)?;
    if !best_obj.is_finite() {
        return Err(DsiError::numerical(format!("RML objective non-finite at start, xi = {xi_star:?}")));
    }

    let mut adam = crate::rae::AdamState::<S>::new(n_l, crate::rae::AdamConfig::with_learning_rate(cfg.learning_rate))?;
    let h = S::of_f64(cfg.fd_step);
    let two_h = S::of_f64(2.0 * cfg.fd_step);
    for iter in 0..cfg.max_iterations {
        let mut grad = DVector::zeros(n_l);
        for p in 0..n_l {
            let mut plus = xi.clone();
            plus[p] += h;
            let mut minus = xi.clone();
            minus[p] -= h;
            grad[p] = (objective(&plus)? - objective(&minus)?) / two_h;
        }
        if grad.norm().as_f64() < cfg.gradient_tolerance {
            break;
        }
        adam.step(&mut xi, &grad)?;
        let obj = objective(&xi)?;
        if !obj.is_finite() {
            return Err(DsiError::numerical(format!(
                "RML objective non-finite at iteration {iter}, xi = {xi:?}"
            )));
        }
        if obj < best_obj {
            best_obj = obj;
            best.copy_from(&xi);
        }
    }
    Ok(best)
}

/// Clamps every value of each quantity into its [lower, upper] bounds.
pub fn truncate<S: Scalar>(e: &Ensemble<S>, bounds: &[(S, S)]) -> Result<Ensemble<S>> {
    if bounds.len() != e.schema().n_qoi() {
        return Err(DsiError::config(format!(
            "{} bound pairs provided for {} quantities",
            bounds.len(),
            e.schema().n_qoi()
        )));
    }
    for &(lo, hi) in bounds {
        if !(lo <= hi) {
            return Err(DsiError::config("truncation bounds must satisfy lower <= upper"));
        }
    }
    let members = e
        .iter_members()
        .map(|m| {
            let mut out = m.clone();
            for q in 0..bounds.len() {
                let (lo, hi) = bounds[q];
                for v in out.row_mut(q).iter_mut() {
                    if *v < lo {
                        *v = lo;
                    } else if *v > hi {
                        *v = hi;
                    }
                }
            }
            out
        })
        .collect();
    Ensemble::new(e.schema().clone(), members)
}

/// Rates stay nonnegative and unbounded above.
pub fn nonnegative_bounds<S: Scalar>(n_qoi: usize) -> Vec<(S, S)> {
    vec![(S::zero(), S::max_value().unwrap()); n_qoi]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::select_hm;

    fn small_schema(n_qoi: usize, n_t: usize) -> DataSchema {
        let names = (0..n_qoi).map(|q| format!("Q{q}")).collect();
        let times = (0..n_t).map(|t| (t + 1) as f64).collect();
        DataSchema::new(names, times).unwrap()
    }

    fn random_ensemble(schema: &DataSchema, n_r: usize, seed: u64) -> Ensemble<f64> {
        let mut r = DsiRng::from_seed(seed);
        let members = (0..n_r)
            .map(|_| DMatrix::from_fn(schema.n_qoi(), schema.n_t(), |_, _| rng::normal::<f64>(&mut r, 5.0, 2.0)))
            .collect();
        Ensemble::new(schema.clone(), members).unwrap()
    }

    #[test]
    fn default_alphas_satisfy_constraint() {
        assert_eq!(default_alphas(1), vec![1.0]);
        assert_eq!(default_alphas(4), vec![4.0; 4]);
        for n_a in 1..=8 {
            let cfg = EsmdaConfig::new(n_a, 3);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn config_rejects_bad_schedules() {
        let bad = EsmdaConfig { alphas: vec![2.0, 3.0], seed: 0, member_streams: None };
        assert!(bad.validate().is_err());
        let bad = EsmdaConfig { alphas: vec![], seed: 0, member_streams: None };
        assert!(bad.validate().is_err());
        let bad = EsmdaConfig { alphas: vec![-1.0, 0.5], seed: 0, member_streams: None };
        assert!(bad.validate().is_err());
        let good = EsmdaConfig { alphas: vec![2.0, 4.0, 4.0], seed: 0, member_streams: None };
        good.validate().unwrap();
    }

    #[test]
    fn cross_cov_matches_hand_computation() {
        // Three 2-vector samples: a = {(1,2),(3,0),(5,4)}, b = {(2,1),(0,1),(4,4)}.
        let a = DMatrix::<f64>::from_column_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 5.0, 4.0]);
        let b = DMatrix::<f64>::from_column_slice(2, 3, &[2.0, 1.0, 0.0, 1.0, 4.0, 4.0]);
        // Means: a_bar = (3,2), b_bar = (2,2). Summing deviation outer
        // products and halving gives [[2, 3], [4, 3]].
        let c = cross_cov(&a, &b).unwrap();
        assert!((c[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((c[(0, 1)] - 3.0).abs() < 1e-12);
        assert!((c[(1, 0)] - 4.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 3.0).abs() < 1e-12);

        let self_cov = cross_cov(&a, &a).unwrap();
        assert!((self_cov.clone() - self_cov.transpose()).norm() < 1e-14);

        let constant = DMatrix::from_element(2, 3, 7.0);
        let zero = cross_cov(&constant, &b).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-14));

        assert!(cross_cov(&a, &DMatrix::<f64>::zeros(2, 2)).is_err());
    }

    #[test]
    fn huge_error_leaves_prior_unchanged() {
        let schema = small_schema(2, 4);
        let e = random_ensemble(&schema, 30, 11);
        let obs = ObservationSet::new(vec![(0, 1), (1, 2)], vec![5.0, 5.0], vec![1e9, 1e9]).unwrap();
        let out = esmda_update_data(&e, &obs, &EsmdaConfig::new(2, 99)).unwrap();
        for i in 0..30 {
            let prior = e.member_flat(i);
            let post = out.posterior.member_flat(i);
            let rel = (&post - &prior).norm() / prior.norm();
            assert!(rel < 1e-6, "member {i} moved by {rel}");
        }
    }

    #[test]
    fn permuting_members_and_streams_permutes_posterior() {
        let schema = small_schema(1, 3);
        let e = random_ensemble(&schema, 6, 21);
        let obs = ObservationSet::new(vec![(0, 0)], vec![4.0], vec![0.5]).unwrap();
        let cfg = EsmdaConfig::new(2, 7);
        let base = esmda_update_data(&e, &obs, &cfg).unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = Ensemble::new(schema, perm.iter().map(|&i| e.member_values(i).clone()).collect()).unwrap();
        let cfg_perm = EsmdaConfig {
            member_streams: Some(perm.iter().map(|&i| i as u64).collect()),
            ..cfg
        };
        let out = esmda_update_data(&permuted, &obs, &cfg_perm).unwrap();
        // Covariance sums reduce in column order, so agreement is to
        // round-off, not bitwise.
        for (pos, &orig) in perm.iter().enumerate() {
            let a = out.posterior.member_flat(pos);
            let b = base.posterior.member_flat(orig);
            assert!((&a - &b).amax() < 1e-10, "posterior member at position {pos}");
        }
    }

    #[test]
    fn identity_decoder_reduces_to_data_update() {
        let schema = small_schema(2, 3);
        let e = random_ensemble(&schema, 12, 31);
        let obs = ObservationSet::new(vec![(0, 0), (1, 2)], vec![5.0, 6.0], vec![0.7, 0.9]).unwrap();
        let cfg = EsmdaConfig::new(3, 17);
        let data = esmda_update_data(&e, &obs, &cfg).unwrap();
        let decoder = IdentityDecoder { schema: schema.clone() };
        let latents = LatentEnsemble::new(e.flat_matrix(), ParamTag::Identity).unwrap();
        let latent = esmda_update_latent(&latents, &decoder, &obs, &cfg).unwrap();
        for i in 0..12 {
            let a = data.posterior.member_flat(i);
            let b = latent.posterior.member_flat(i);
            assert!((&a - &b).amax() < 1e-10, "member {i}");
        }
        assert_eq!(data.mean_mismatch.len(), 4);
        for (a, b) in data.mean_mismatch.iter().zip(&latent.mean_mismatch) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_latent_ensemble_is_a_fixed_point() {
        let schema = small_schema(1, 3);
        let decoder = IdentityDecoder { schema: schema.clone() };
        let col = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let latents = DMatrix::from_columns(&[col.clone(), col.clone(), col.clone(), col]);
        let le = LatentEnsemble::new(latents.clone(), ParamTag::Identity).unwrap();
        let obs = ObservationSet::new(vec![(0, 1)], vec![9.0], vec![0.2]).unwrap();
        let out = esmda_update_latent(&le, &decoder, &obs, &EsmdaConfig::new(2, 5)).unwrap();
        assert_eq!(out.posterior_latents.matrix(), &latents);
    }

    #[test]
    fn mismatch_decreases_on_an_informative_problem() {
        let schema = small_schema(2, 4);
        let e = random_ensemble(&schema, 60, 41);
        let obs = ObservationSet::new(vec![(0, 0), (0, 3), (1, 1)], vec![8.0, 2.0, 7.5], vec![0.3, 0.3, 0.3]).unwrap();
        let out = esmda_update_data(&e, &obs, &EsmdaConfig::new(4, 23)).unwrap();
        let m = &out.mean_mismatch;
        assert_eq!(m.len(), 5);
        assert!(m[4] < m[0], "mismatch did not shrink: {m:?}");
    }

    #[test]
    fn rml_with_empty_observations_returns_prior_point() {
        let schema = small_schema(1, 3);
        let decoder = IdentityDecoder { schema: schema.clone() };
        let le = LatentEnsemble::new(DMatrix::<f64>::from_element(3, 2, 0.5), ParamTag::Identity).unwrap();
        let obs = ObservationSet::<f64>::new(vec![], vec![], vec![]).unwrap();
        let rng = DsiRng::from_seed(70);
        let xi = rml_sample(&le, &decoder, &obs, &rng, &RmlConfig::default()).unwrap();
        let mut check = rng.stream(1);
        let expected = DVector::from_fn(3, |_, _| rng::standard_normal::<f64>(&mut check));
        assert_eq!(xi, expected);
    }

    #[test]
    fn rml_with_uninformative_observations_returns_prior_point() {
        // With a huge error std the data gradient vanishes, so the gradient
        // tolerance fires at the start point xi*.
        let schema = small_schema(1, 3);
        let decoder = IdentityDecoder { schema: schema.clone() };
        let le = LatentEnsemble::new(DMatrix::<f64>::from_element(3, 2, 0.5), ParamTag::Identity).unwrap();
        let obs = ObservationSet::new(vec![(0, 1)], vec![2.0], vec![1e12]).unwrap();
        let rng = DsiRng::from_seed(55);
        let xi = rml_sample(&le, &decoder, &obs, &rng, &RmlConfig::default()).unwrap();
        let mut check = rng.stream(1);
        let expected = DVector::from_fn(3, |_, _| rng::standard_normal::<f64>(&mut check));
        assert_eq!(xi, expected);
    }

    #[test]
    fn rml_never_ends_worse_than_its_start() {
        let schema = small_schema(1, 4);
        let e = random_ensemble(&schema, 40, 71);
        let basis = crate::pcaht::fit_pca(&e, crate::pcaht::PcaTruncation::Components(3)).unwrap();
        let obs = ObservationSet::new(vec![(0, 0), (0, 2)], vec![5.5, 4.0], vec![0.4, 0.4]).unwrap();
        let rng = DsiRng::from_seed(13);
        let latents = crate::pcaht::pca_encode_ensemble(&basis, &e).unwrap();
        let le = LatentEnsemble::new(latents, ParamTag::Pca).unwrap();
        let cfg = RmlConfig { max_iterations: 80, ..RmlConfig::default() };
        let xi = rml_sample(&le, &basis, &obs, &rng, &cfg).unwrap();

        let objective = |xi: &DVector<f64>, xi_star: &DVector<f64>| -> f64 {
            let hm = select_hm(&pca_decode(&basis, xi).unwrap(), &obs).unwrap();
            let data: f64 = (0..2).map(|j| ((hm[j] - {
                let p = crate::data::perturb_observations(&obs, &mut rng.stream(0));
                p.values()[j]
            }) / 0.4).powi(2)).sum();
            let reg = (xi - xi_star).norm_squared();
            0.5 * data + 0.5 * reg
        };
        let mut xi_rng = rng.stream(1);
        let xi_star = DVector::from_fn(3, |_, _| rng::standard_normal::<f64>(&mut xi_rng));
        assert!(objective(&xi, &xi_star) <= objective(&xi_star, &xi_star) + 1e-12);
    }

    #[test]
    fn truncation_clamps_and_is_idempotent() {
        let schema = small_schema(2, 2);
        let members = vec![DMatrix::from_row_slice(2, 2, &[-5.0, 3.0, 0.5, 1.5])];
        let e = Ensemble::new(schema, members).unwrap();
        let bounds = vec![(0.0, f64::MAX), (0.0, 1.0)];
        let t1 = truncate(&e, &bounds).unwrap();
        assert_eq!(t1.member_values(0)[(0, 0)], 0.0);
        assert_eq!(t1.member_values(0)[(0, 1)], 3.0);
        assert_eq!(t1.member_values(0)[(1, 1)], 1.0);
        let t2 = truncate(&t1, &bounds).unwrap();
        assert_eq!(t1.member_values(0), t2.member_values(0));

        let within = truncate(&t1, &nonnegative_bounds(2)).unwrap();
        assert_eq!(within.member_values(0), t1.member_values(0));

        assert!(truncate(&e, &[(1.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(truncate(&e, &[(0.0, 1.0)]).is_err());
    }
}

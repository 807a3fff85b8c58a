//! Rejection sampling against the Gaussian data likelihood: the exact (but
//! expensive) reference posterior over a large pre-simulated prior.
//!
//! The envelope constant is the in-sample likelihood maximum, so member `i`
//! is accepted with probability `exp(-(O_i - O_min))`. This is exact for the
//! discrete posterior over the prior samples, which is the comparison
//! target. One uniform draw per member, on the member's own substream, so
//! re-running any superset of the accepted members with the same streams
//! re-accepts them.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{select_hm, DataSchema, DataVector, Ensemble, ObservationSet};
use crate::error::{DsiError, Result};
use crate::rng::DsiRng;
use crate::scalar::Scalar;

/// Outcome of one rejection-sampling pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsResult {
    /// Indices of accepted members, ascending.
    pub accepted: Vec<usize>,
    /// Acceptance probability of every member, `exp(-(O_i - O_min))`.
    pub acceptance_prob: Vec<f64>,
    /// Number of proposals examined.
    pub total: usize,
    /// Smallest data-mismatch objective over the proposals.
    pub o_min: f64,
}

impl RsResult {
    pub fn n_accepted(&self) -> usize {
        self.accepted.len()
    }
}

/// Data-mismatch objective `O = 1/2 (hm - d_obs)^T C_D^{-1} (hm - d_obs)`,
/// evaluated in `f64`.
pub fn data_mismatch_objective<S: Scalar>(hm: &DVector<S>, obs: &ObservationSet<S>) -> Result<f64> {
    if hm.len() != obs.n_hm() {
        return Err(DsiError::schema(format!(
            "mismatch objective got {} components for {} observations",
            hm.len(),
            obs.n_hm()
        )));
    }
    let values = obs.values();
    let sigma = obs.error_std();
    let mut acc = 0.0;
    for j in 0..obs.n_hm() {
        let r = (hm[j] - values[j]).as_f64() / sigma[j].as_f64();
        acc += r * r;
    }
    Ok(0.5 * acc)
}

fn decide(objectives: &[f64], streams: &[u64], rng: &DsiRng) -> (Vec<usize>, Vec<f64>, f64) {
    let o_min = objectives.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut accepted = Vec::new();
    let mut probs = Vec::with_capacity(objectives.len());
    for (i, o) in objectives.iter().enumerate() {
        let p = (-(o - o_min)).exp();
        let u: f64 = rng.stream(streams[i]).random();
        if u < p {
            accepted.push(i);
        }
        probs.push(p);
    }
    (accepted, probs, o_min)
}

/// Rejection sampling over an in-memory prior ensemble; member `i` draws
/// from substream `i`.
pub fn rejection_sample<S: Scalar>(
    e: &Ensemble<S>,
    obs: &ObservationSet<S>,
    rng: &DsiRng,
) -> Result<RsResult> {
    let streams: Vec<u64> = (0..e.n_members() as u64).collect();
    rejection_sample_with_streams(e, obs, rng, &streams)
}

/// Rejection sampling with explicit per-member substream ids, so a
/// sub-ensemble can replay the draws of its members' original positions.
pub fn rejection_sample_with_streams<S: Scalar>(
    e: &Ensemble<S>,
    obs: &ObservationSet<S>,
    rng: &DsiRng,
    streams: &[u64],
) -> Result<RsResult> {
    obs.validate_against(e.schema())?;
    obs.require_positive_error()?;
    if streams.len() != e.n_members() {
        return Err(DsiError::config(format!(
            "{} streams provided for {} members",
            streams.len(),
            e.n_members()
        )));
    }
    let objectives: Vec<f64> = (0..e.n_members())
        .map(|i| data_mismatch_objective(&select_hm(&e.member(i), obs)?, obs))
        .collect::<Result<_>>()?;
    let (accepted, acceptance_prob, o_min) = decide(&objectives, streams, rng);
    Ok(RsResult { accepted, acceptance_prob, total: e.n_members(), o_min })
}

/// Rejection sampling over a generated prior that is never held in memory:
/// pass one evaluates only the observed components of each proposal, pass
/// two regenerates the accepted members. `generate(i)` must be a pure
/// function of `i`.
pub fn rejection_sample_streamed<S: Scalar>(
    schema: &DataSchema,
    n_proposals: usize,
    generate: &(dyn Fn(usize) -> Result<DataVector<S>> + Sync),
    obs: &ObservationSet<S>,
    rng: &DsiRng,
) -> Result<(RsResult, Ensemble<S>)> {
    obs.validate_against(schema)?;
    obs.require_positive_error()?;
    if n_proposals == 0 {
        return Err(DsiError::config("rejection sampling needs at least one proposal"));
    }
    let objectives: Vec<f64> = (0..n_proposals)
        .map(|i| {
            let d = generate(i)?;
            if d.schema() != schema {
                return Err(DsiError::schema(format!("proposal {i} has a different schema")));
            }
            data_mismatch_objective(&select_hm(&d, obs)?, obs)
        })
        .collect::<Result<_>>()?;
    let streams: Vec<u64> = (0..n_proposals as u64).collect();
    let (accepted, acceptance_prob, o_min) = decide(&objectives, &streams, rng);
    if accepted.is_empty() {
        return Err(DsiError::numerical(format!(
            "rejection sampling accepted no member out of {n_proposals}; o_min = {o_min:.3}"
        )));
    }
    let members: Result<Vec<DataVector<S>>> = accepted.iter().map(|&i| generate(i)).collect();
    let ensemble = Ensemble::from_members(members?)?;
    let rs = RsResult { accepted, acceptance_prob, total: n_proposals, o_min };
    Ok((rs, ensemble))
}

/// The accepted members of `e` as an ensemble.
pub fn accepted_ensemble<S: Scalar>(e: &Ensemble<S>, rs: &RsResult) -> Result<Ensemble<S>> {
    if rs.accepted.iter().any(|&i| i >= e.n_members()) {
        return Err(DsiError::config("accepted index out of range for this ensemble"));
    }
    if rs.accepted.is_empty() {
        return Err(DsiError::numerical("no accepted members to extract".to_string()));
    }
    let members = rs.accepted.iter().map(|&i| e.member_values(i).clone()).collect();
    Ensemble::new(e.schema().clone(), members)
}

//! Mini-batch ADAM training of the recurrent autoencoder.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Ensemble;
use crate::error::{DsiError, Result};
use crate::rng::DsiRng;
use crate::scalar::Scalar;

use super::adam::{AdamConfig, AdamState};
use super::{loss_and_grad_sums, Normalization, RaeDims, RaeParams, RaeWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaeTrainConfig {
    pub n_h: usize,
    pub n_l: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Gradients are rescaled to this global L2 norm when they exceed it,
    /// stabilizing backprop through long sequences.
    pub clip_norm: f64,
    /// Multiplicative per-epoch learning-rate factor; 1.0 keeps the rate
    /// constant. Epoch k trains at `learning_rate * lr_decay^k`.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
}

fn default_lr_decay() -> f64 {
    1.0
}

impl Default for RaeTrainConfig {
    fn default() -> Self {
        Self {
            n_h: 50,
            n_l: 31,
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            lr_decay: 1.0,
        }
    }
}

impl RaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_h == 0 || self.n_l == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(DsiError::config("autoencoder training sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(DsiError::config("learning rate and clip norm must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(DsiError::config("learning-rate decay must sit inside (0, 1]"));
        }
        Ok(())
    }
}

/// Trains on the ensemble: fits per-quantity min/max normalization, then
/// runs shuffled mini-batch ADAM on exact backprop gradients. Returns the
/// trained weights and the per-epoch mean loss (squared L2 reconstruction
/// error in normalized space, averaged over members, evaluated on each
/// batch before its update).
///
/// Substreams of `rng`: 0 initializes weights, 1 + epoch shuffles that
/// epoch's member order. Results are bit-identical for a given seed,
/// config, and platform, independent of thread count.
pub fn train_rae<S: Scalar>(
    e: &Ensemble<S>,
    cfg: &RaeTrainConfig,
    rng: &DsiRng,
) -> Result<(RaeWeights<S>, Vec<f64>)> {
    cfg.validate()?;
    let n_r = e.n_members();
    if n_r < cfg.batch_size {
        return Err(DsiError::config(format!(
            "ensemble has {n_r} members, smaller than the batch size {}",
            cfg.batch_size
        )));
    }
    let schema = e.schema().clone();
    let dims = RaeDims { n_qoi: schema.n_qoi(), n_t: schema.n_t(), n_h: cfg.n_h, n_l: cfg.n_l };
    dims.validate()?;

    let norm = Normalization::fit(e);
    let members_norm: Vec<DMatrix<S>> = e.iter_members().map(|m| norm.normalize_values(m)).collect();

    let params = RaeParams::<S>::init(&dims, &mut rng.stream(0));
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(dims.param_count(), AdamConfig::with_learning_rate(cfg.learning_rate))?;
    let clip = S::of_f64(cfg.clip_norm);

    let mut order: Vec<usize> = (0..n_r).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.lr_decay < 1.0 && epoch > 0 {
            adam.set_learning_rate(cfg.learning_rate * cfg.lr_decay.powi(epoch as i32))?;
        }
        order.shuffle(&mut rng.stream(1 + epoch as u64));
        let mut epoch_loss_sum = S::zero();
        for batch in order.chunks(cfg.batch_size) {
            let params = RaeParams::from_flat(&dims, flat.as_slice())?;
            let (loss_sum, grad_sum) = loss_and_grad_sums(&params, &dims, &members_norm, batch, true);
            if !loss_sum.is_finite() {
                return Err(DsiError::numerical(format!(
                    "training diverged at epoch {epoch}: non-finite batch loss (lr {}, clip {})",
                    cfg.learning_rate, cfg.clip_norm
                )));
            }
            epoch_loss_sum += loss_sum;
            let mut grad = grad_sum.expect("gradient requested");
            grad /= S::of_f64(batch.len() as f64);
            let gnorm = grad.norm();
            if gnorm > clip {
                grad *= clip / gnorm;
            }
            adam.step(&mut flat, &grad)?;
        }
        let epoch_loss = (epoch_loss_sum / S::of_f64(n_r as f64)).as_f64();
        if !epoch_loss.is_finite() {
            return Err(DsiError::numerical(format!("training diverged at epoch {epoch}: non-finite epoch loss")));
        }
        history.push(epoch_loss);
    }

    let trained = RaeParams::from_flat(&dims, flat.as_slice())?;
    Ok((RaeWeights::from_parts(schema, dims, trained, norm)?, history))
}

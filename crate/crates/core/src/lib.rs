//! Data-space inversion (DSI) toolkit.
//!
//! Posterior predictions of simulated time series are built directly in data
//! space: a prior ensemble of forward-model output vectors is reduced to a
//! low-dimensional latent representation (PCA with histogram transformation,
//! or an LSTM-based recurrent autoencoder), conditioned on observed data with
//! ensemble smoothing (ESMDA) or randomized maximum likelihood, and checked
//! against a rejection-sampling reference with ensemble diagnostics.
//!
//! The crate is generic over the floating-point scalar through [`Scalar`]
//! (implemented for `f32` and `f64`); the `*64` aliases at the crate root fix
//! the double-precision types used by the command-line driver.
//!
//! Module map:
//!
//! * [`data`] - schemas, data vectors, ensembles, observation sets.
//! * [`rng`] - seeded deterministic random generation with substreams.
//! * [`io`] - CSV and JSON artifact formats.
//! * [`synth`] - synthetic forward models (tank analog, linear-Gaussian).
//! * [`pcaht`] - PCA basis and marginal histogram transformation.
//! * [`rae`] - recurrent autoencoder: LSTM layers, ADAM, training.
//! * [`assim`] - ESMDA and RML posterior samplers.
//! * [`rejection`] - rejection-sampling reference posterior.
//! * [`diag`] - quantile bands, derived quantities, Mahalanobis checks.

pub mod assim;
pub mod data;
pub mod diag;
pub mod error;
pub mod io;
pub mod linalg;
pub mod pcaht;
pub mod rae;
pub mod rejection;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use error::{DsiError, Result};
pub use rng::DsiRng;
pub use scalar::Scalar;

/// Double-precision aliases used by the CLI and most tests.
pub type DataSchema = data::DataSchema;
pub type DataVector64 = data::DataVector<f64>;
pub type Ensemble64 = data::Ensemble<f64>;
pub type ObservationSet64 = data::ObservationSet<f64>;
pub type PcaBasis64 = pcaht::PcaBasis<f64>;
pub type MarginalCdfTable64 = pcaht::MarginalCdfTable<f64>;
pub type LatentEnsemble64 = assim::LatentEnsemble<f64>;
pub type RaeWeights64 = rae::RaeWeights<f64>;

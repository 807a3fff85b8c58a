//! Run configuration: one JSON file describing the forward model, the
//! observations, the method roster, and every stage's settings and seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsi_core::rae::RaeTrainConfig;
use dsi_core::synth::TankPriorConfig;
use dsi_core::{DsiError, Result};

/// Time grid: either a uniform grid `dt, 2dt, …, n_t·dt` or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimesConfig {
    Uniform { n_t: usize, dt: f64 },
    Explicit { values: Vec<f64> },
}

impl TimesConfig {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TimesConfig::Uniform { n_t, dt } => (1..=*n_t).map(|k| dt * k as f64).collect(),
            TimesConfig::Explicit { values } => values.clone(),
        }
    }
}

/// Synthetic forward model generating the prior ensemble and the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardModelConfig {
    Tank {
        tank: TankPriorConfig,
        times: TimesConfig,
        n_r: usize,
        seed: u64,
    },
    Linear {
        quantities: Vec<String>,
        times: TimesConfig,
        /// Row-major `n_f x n_m` operator.
        g: Vec<Vec<f64>>,
        prior_mean: Vec<f64>,
        prior_cov: Vec<Vec<f64>>,
        n_r: usize,
        seed: u64,
    },
}

impl ForwardModelConfig {
    pub fn n_r(&self) -> usize {
        match self {
            ForwardModelConfig::Tank { n_r, .. } | ForwardModelConfig::Linear { n_r, .. } => *n_r,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ForwardModelConfig::Tank { seed, .. } | ForwardModelConfig::Linear { seed, .. } => {
                *seed
            }
        }
    }
}

/// Observed entries: quantity name and day, both resolved against the
/// schema. `error_fraction` scales each |true value| into its error std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub entries: Vec<(String, f64)>,
    pub error_fraction: f64,
    pub truth_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    PcaHt,
    Rae,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Esmda,
    Rml,
}

/// One posterior-sampling pipeline: a parameterization plus a sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub parameterization: ParamKind,
    pub sampler: SamplerKind,
    /// Clamp posterior values to the nonnegative orthant (data-space
    /// samplers can leave the physical range; decoders cannot).
    #[serde(default)]
    pub truncate: bool,
}

/// PCA truncation: exactly one of `energy` or `components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaHtSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaeSection {
    #[serde(flatten)]
    pub train: RaeTrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsmdaSection {
    pub n_a: usize,
    /// Explicit inflation factors; defaults to `n_a` copies of `n_a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmlSection {
    pub n_samples: usize,
    #[serde(default = "default_rml_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_rml_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_rml_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_rml_grad_tol")]
    pub gradient_tolerance: f64,
    pub seed: u64,
}

fn default_rml_iterations() -> usize {
    500
}
fn default_rml_lr() -> f64 {
    0.05
}
fn default_rml_fd_step() -> f64 {
    1e-4
}
fn default_rml_grad_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsSection {
    pub n_proposals: usize,
    pub seed: u64,
}

/// Scatter of one quantity at two times, mirroring the reconstruction
/// cross-plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossplotConfig {
    pub quantity: String,
    pub time_a: f64,
    pub time_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub quantile_probs: Vec<f64>,
    /// Derived-quantity names resolved through the built-in expression set
    /// (`field_injection`, `water_cut_<P>`, …).
    #[serde(default)]
    pub derived: Vec<String>,
    /// Pairs of derived-quantity names whose per-step covariance and
    /// correlation series are written per method.
    #[serde(default)]
    pub corr_pairs: Vec<(String, String)>,
    pub mahalanobis_energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossplot: Option<CrossplotConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub forward_model: ForwardModelConfig,
    pub observations: ObservationConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_ht: Option<PcaHtSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rae: Option<RaeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub esmda: Option<EsmdaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rml: Option<RmlSection>,
    pub rs: RsSection,
    pub diagnostics: DiagnosticsConfig,
}

impl RunConfig {
    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                DsiError::MissingArtifact(path.display().to_string())
            } else {
                DsiError::Io { path: path.display().to_string(), source: e }
            }
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| DsiError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(DsiError::config("at least one method is required"));
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.methods {
            if !names.insert(m.name.as_str()) {
                return Err(DsiError::config(format!("duplicate method name {:?}", m.name)));
            }
            if m.name.is_empty()
                || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(DsiError::config(format!(
                    "method name {:?} must be nonempty and filename-safe",
                    m.name
                )));
            }
            match m.parameterization {
                ParamKind::PcaHt if self.pca_ht.is_none() => {
                    return Err(DsiError::config(format!(
                        "method {:?} needs the pca_ht section",
                        m.name
                    )));
                }
                ParamKind::Rae if self.rae.is_none() => {
                    return Err(DsiError::config(format!(
                        "method {:?} needs the rae section",
                        m.name
                    )));
                }
                _ => {}
            }
            match m.sampler {
                SamplerKind::Esmda if self.esmda.is_none() => {
                    return Err(DsiError::config(format!(
                        "method {:?} needs the esmda section",
                        m.name
                    )));
                }
                SamplerKind::Rml if self.rml.is_none() => {
                    return Err(DsiError::config(format!(
                        "method {:?} needs the rml section",
                        m.name
                    )));
                }
                _ => {}
            }
        }
        if let Some(p) = &self.pca_ht {
            match (p.energy, p.components) {
                (Some(e), None) if e > 0.0 => {}
                (None, Some(c)) if c >= 1 => {}
                _ => {
                    return Err(DsiError::config(
                        "pca_ht needs exactly one of positive energy or components >= 1",
                    ));
                }
            }
        }
        if let Some(r) = &self.rae {
            r.train.validate()?;
        }
        if let Some(e) = &self.esmda {
            if e.n_a == 0 {
                return Err(DsiError::config("esmda.n_a must be at least 1"));
            }
            if let Some(a) = &e.alphas {
                if a.len() != e.n_a {
                    return Err(DsiError::config("esmda.alphas length must equal n_a"));
                }
            }
        }
        if let Some(r) = &self.rml {
            if r.n_samples == 0 {
                return Err(DsiError::config("rml.n_samples must be at least 1"));
            }
            dsi_core::assim::RmlConfig {
                max_iterations: r.max_iterations,
                gradient_tolerance: r.gradient_tolerance,
                fd_step: r.fd_step,
                learning_rate: r.learning_rate,
            }
            .validate()?;
        }
        if self.rs.n_proposals == 0 {
            return Err(DsiError::config("rs.n_proposals must be at least 1"));
        }
        let d = &self.diagnostics;
        if d.quantile_probs.is_empty()
            || d.quantile_probs.iter().any(|p| !(*p > 0.0 && *p < 1.0))
        {
            return Err(DsiError::config("quantile_probs must be inside (0, 1)"));
        }
        if !(d.mahalanobis_energy > 0.0) {
            return Err(DsiError::config("mahalanobis_energy must be positive"));
        }
        if self.observations.entries.is_empty() {
            return Err(DsiError::config("observation entries must be nonempty"));
        }
        if !(self.observations.error_fraction >= 0.0)
            || !self.observations.error_fraction.is_finite()
        {
            return Err(DsiError::config("error_fraction must be finite and >= 0"));
        }
        match &self.forward_model {
            ForwardModelConfig::Tank { tank, times, n_r, .. } => {
                tank.validate()?;
                if *n_r < 2 {
                    return Err(DsiError::config("n_r must be at least 2"));
                }
                if times.values().is_empty() {
                    return Err(DsiError::config("time grid must be nonempty"));
                }
            }
            ForwardModelConfig::Linear { quantities, times, g, prior_mean, prior_cov, n_r, .. } => {
                if *n_r < 2 {
                    return Err(DsiError::config("n_r must be at least 2"));
                }
                let n_f = quantities.len() * times.values().len();
                if g.len() != n_f || g.iter().any(|row| row.len() != prior_mean.len()) {
                    return Err(DsiError::config("linear operator shape mismatch"));
                }
                if prior_cov.len() != prior_mean.len()
                    || prior_cov.iter().any(|row| row.len() != prior_mean.len())
                {
                    return Err(DsiError::config("prior covariance shape mismatch"));
                }
            }
        }
        Ok(())
    }

    /// Replaces every stage seed with one derived from `seed`, each stage
    /// getting a distinct offset.
    pub fn override_seeds(&mut self, seed: u64) {
        match &mut self.forward_model {
            ForwardModelConfig::Tank { seed: s, .. } | ForwardModelConfig::Linear { seed: s, .. } => {
                *s = seed.wrapping_add(1);
            }
        }
        self.observations.truth_seed = seed.wrapping_add(2);
        if let Some(r) = &mut self.rae {
            r.seed = seed.wrapping_add(3);
        }
        if let Some(e) = &mut self.esmda {
            e.seed = seed.wrapping_add(4);
        }
        if let Some(r) = &mut self.rml {
            r.seed = seed.wrapping_add(5);
        }
        self.rs.seed = seed.wrapping_add(6);
    }

    /// The effective output directory: `DSI_OUT_ROOT`, when set, replaces
    /// the parent of `output_dir` (relative paths are joined onto it).
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os("DSI_OUT_ROOT") {
            Some(root) => {
                let rel: PathBuf = self
                    .output_dir
                    .components()
                    .filter(|c| matches!(c, std::path::Component::Normal(_)))
                    .collect();
                PathBuf::from(root).join(rel)
            }
            None => self.output_dir.clone(),
        }
    }
}

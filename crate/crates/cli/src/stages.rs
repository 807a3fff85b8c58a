//! The pipeline stages. Every stage is a pure function of the run
//! configuration and the artifact tree, so re-running a stage (or the whole
//! pipeline) reproduces its outputs byte for byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use dsi_core::assim::{
    esmda_update_data, esmda_update_latent, nonnegative_bounds, rml_sample, truncate,
    default_alphas, EsmdaConfig, IdentityDecoder, LatentDecoder, LatentEnsemble, ParamTag,
    PcaHtDecoder, RmlConfig,
};
use dsi_core::data::{DataVector, Ensemble, ObservationSet};
use dsi_core::diag::{
    builtin_expr, corr_cov_series, derived_quantity, dm_cdf_compare, fit_mahalanobis,
    quantile_bands, DivisionPolicy, QuantileBands,
};
use dsi_core::io;
use dsi_core::pcaht::{fit_ht, fit_pca, pca_encode_ensemble, PcaTruncation};
use dsi_core::rae::{rae_encode_ensemble, train_rae};
use dsi_core::rejection::{rejection_sample_streamed, RsResult};
use dsi_core::rng::standard_normal;
use dsi_core::synth::{
    linear_prior_ensemble, sample_tank_params, simulate_linear, simulate_tank, tank_ensemble,
    tank_schema, LinearGaussianModel,
};
use dsi_core::{DataSchema, DsiError, DsiRng, Result};

use crate::config::{
    CrossplotConfig, ForwardModelConfig, MethodConfig, ParamKind, RunConfig, SamplerKind,
};

/// Artifact locations under one output directory.
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn prior(&self) -> PathBuf {
        self.dir.join("prior.csv")
    }
    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.csv")
    }
    pub fn observations(&self) -> PathBuf {
        self.dir.join("observations.json")
    }
    pub fn pca_basis_meta(&self) -> PathBuf {
        self.dir.join("pca_basis.json")
    }
    pub fn pca_basis_matrix(&self) -> PathBuf {
        self.dir.join("pca_basis.csv")
    }
    pub fn ht_table(&self) -> PathBuf {
        self.dir.join("ht_table.csv")
    }
    pub fn rae_weights_meta(&self) -> PathBuf {
        self.dir.join("rae_weights.json")
    }
    pub fn rae_weights_params(&self) -> PathBuf {
        self.dir.join("rae_params.csv")
    }
    pub fn rae_loss(&self) -> PathBuf {
        self.dir.join("rae_loss.csv")
    }
    pub fn latents(&self, kind: ParamKind) -> PathBuf {
        match kind {
            ParamKind::PcaHt => self.dir.join("latents_pca_ht.csv"),
            ParamKind::Rae => self.dir.join("latents_rae.csv"),
            ParamKind::None => self.dir.join("latents_identity.csv"),
        }
    }
    pub fn posterior(&self, method: &str) -> PathBuf {
        self.dir.join(format!("posterior_{method}.csv"))
    }
    pub fn manifest(&self, method: &str) -> PathBuf {
        self.dir.join(format!("manifest_{method}.json"))
    }
    pub fn rs_result(&self) -> PathBuf {
        self.dir.join("rs_result.json")
    }
    pub fn rs_accepted(&self) -> PathBuf {
        self.dir.join("rs_accepted.csv")
    }
    pub fn evaluate_dir(&self) -> PathBuf {
        self.dir.join("evaluate")
    }
    pub fn bands(&self, source: &str) -> PathBuf {
        self.evaluate_dir().join(format!("bands_{source}.csv"))
    }
    pub fn derived_bands(&self, source: &str) -> PathBuf {
        self.evaluate_dir().join(format!("derived_bands_{source}.csv"))
    }
    pub fn crossplot(&self, source: &str) -> PathBuf {
        self.evaluate_dir().join(format!("crossplot_{source}.csv"))
    }
    pub fn corr_series(&self, a: &str, b: &str, source: &str) -> PathBuf {
        self.evaluate_dir().join(format!("corr_{a}__{b}_{source}.csv"))
    }
    pub fn dm_cdf(&self, source: &str) -> PathBuf {
        self.evaluate_dir().join(format!("dm_cdf_{source}.csv"))
    }
    pub fn summary(&self) -> PathBuf {
        self.evaluate_dir().join("summary.json")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| DsiError::Io { path: dir.display().to_string(), source: e })
}

/// The schema implied by the forward-model section.
pub fn model_schema(cfg: &RunConfig) -> Result<DataSchema> {
    match &cfg.forward_model {
        ForwardModelConfig::Tank { tank, times, .. } => {
            tank_schema(tank.n_inj, tank.n_prod, times.values())
        }
        ForwardModelConfig::Linear { quantities, times, .. } => {
            DataSchema::new(quantities.clone(), times.values())
        }
    }
}

fn linear_model(cfg: &RunConfig) -> Result<LinearGaussianModel<f64>> {
    match &cfg.forward_model {
        ForwardModelConfig::Linear { g, prior_mean, prior_cov, .. } => {
            let schema = model_schema(cfg)?;
            let n_m = prior_mean.len();
            let g_m = DMatrix::from_fn(g.len(), n_m, |i, j| g[i][j]);
            let cov = DMatrix::from_fn(n_m, n_m, |i, j| prior_cov[i][j]);
            LinearGaussianModel::new(schema, g_m, DVector::from_column_slice(prior_mean), cov)
        }
        _ => Err(DsiError::config("forward model is not linear")),
    }
}

/// Resolves `(quantity name, day)` pairs against the schema.
pub fn resolve_entries(schema: &DataSchema, entries: &[(String, f64)]) -> Result<Vec<(usize, usize)>> {
    entries
        .iter()
        .map(|(name, day)| {
            let q = schema
                .quantity_index(name)
                .ok_or_else(|| DsiError::config(format!("unknown observed quantity {name:?}")))?;
            let t = schema
                .times()
                .iter()
                .position(|t| (t - day).abs() <= 1e-9 * day.abs().max(1.0))
                .ok_or_else(|| {
                    DsiError::config(format!("day {day} is not on the simulation time grid"))
                })?;
            Ok((q, t))
        })
        .collect()
}

/// Draws the prior ensemble of the configured forward model.
pub fn draw_prior(cfg: &RunConfig) -> Result<Ensemble<f64>> {
    let rng = DsiRng::from_seed(cfg.forward_model.seed());
    match &cfg.forward_model {
        ForwardModelConfig::Tank { tank, times, n_r, .. } => {
            tank_ensemble(tank, &times.values(), *n_r, &rng)
        }
        ForwardModelConfig::Linear { n_r, .. } => {
            linear_prior_ensemble(&linear_model(cfg)?, *n_r, &rng)
        }
    }
}

/// Draws the held-out truth from its own seed.
pub fn draw_truth(cfg: &RunConfig) -> Result<DataVector<f64>> {
    let rng = DsiRng::from_seed(cfg.observations.truth_seed);
    let e = match &cfg.forward_model {
        ForwardModelConfig::Tank { tank, times, .. } => {
            tank_ensemble(tank, &times.values(), 1, &rng)?
        }
        ForwardModelConfig::Linear { .. } => linear_prior_ensemble(&linear_model(cfg)?, 1, &rng)?,
    };
    Ok(e.member(0))
}

/// Builds the observation set: values are the truth at the observed entries
/// and the error std is `error_fraction x |true value|`.
pub fn build_observations(cfg: &RunConfig, truth: &DataVector<f64>) -> Result<ObservationSet<f64>> {
    let entries = resolve_entries(truth.schema(), &cfg.observations.entries)?;
    let values: Vec<f64> = entries.iter().map(|&(q, t)| truth.values()[(q, t)]).collect();
    let stds: Vec<f64> = values.iter().map(|v| cfg.observations.error_fraction * v.abs()).collect();
    ObservationSet::new(entries, values, stds)
}

/// Stage 1: prior ensemble, truth, observations.
pub fn cmd_generate_prior(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    create_dir(&art.dir)?;
    let prior = draw_prior(cfg)?;
    let truth = draw_truth(cfg)?;
    let obs = build_observations(cfg, &truth)?;
    io::write_ensemble_csv(&prior, &art.prior())?;
    io::write_ensemble_csv(&Ensemble::from_members(vec![truth])?, &art.truth())?;
    io::write_observations_json(&obs, &art.observations())?;
    Ok(())
}

fn distinct_parameterizations(cfg: &RunConfig) -> Vec<ParamKind> {
    let mut kinds = Vec::new();
    for m in &cfg.methods {
        if m.parameterization != ParamKind::None && !kinds.contains(&m.parameterization) {
            kinds.push(m.parameterization);
        }
    }
    kinds
}

/// Stage 2: fit every parameterization the method roster references, and
/// write the prior latent ensembles.
pub fn cmd_train(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    let prior: Ensemble<f64> = io::read_ensemble_csv(&art.prior())?;
    for kind in distinct_parameterizations(cfg) {
        match kind {
            ParamKind::PcaHt => {
                let sect = cfg
                    .pca_ht
                    .as_ref()
                    .ok_or_else(|| DsiError::config("pca_ht section missing"))?;
                let trunc = match (sect.energy, sect.components) {
                    (Some(e), None) => PcaTruncation::Energy(e),
                    (None, Some(c)) => PcaTruncation::Components(c),
                    _ => return Err(DsiError::config("ambiguous pca_ht truncation")),
                };
                let basis = fit_pca(&prior, trunc)?;
                let table = fit_ht(&prior, &basis)?;
                io::write_pca_basis(&basis, &art.pca_basis_meta(), &art.pca_basis_matrix())?;
                io::write_ht_table(&table, &art.ht_table())?;
                let latents = pca_encode_ensemble(&basis, &prior)?;
                io::write_matrix_csv(&latents, "latent", "member_", &art.latents(kind))?;
            }
            ParamKind::Rae => {
                let sect =
                    cfg.rae.as_ref().ok_or_else(|| DsiError::config("rae section missing"))?;
                let rng = DsiRng::from_seed(sect.seed);
                let (weights, history) = train_rae(&prior, &sect.train, &rng)?;
                io::write_rae_weights(
                    &weights,
                    &art.rae_weights_meta(),
                    &art.rae_weights_params(),
                )?;
                let loss = DMatrix::from_column_slice(history.len(), 1, &history);
                io::write_matrix_csv(&loss, "epoch", "loss_", &art.rae_loss())?;
                let latents = rae_encode_ensemble(&weights, &prior)?;
                io::write_matrix_csv(&latents, "latent", "member_", &art.latents(kind))?;
            }
            ParamKind::None => {}
        }
    }
    Ok(())
}

/// Per-method record of seeds and convergence written next to the posterior.
#[derive(Debug, Serialize, Deserialize)]
pub struct MethodManifest {
    pub method: String,
    pub parameterization: ParamKind,
    pub sampler: SamplerKind,
    pub truncated: bool,
    /// Every stochastic stage feeding this posterior.
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    /// Mean `||H d - d_obs||` per ESMDA iteration; index 0 is the prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_mismatch: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
}

fn load_decoder(
    cfg: &RunConfig,
    art: &Artifacts,
    kind: ParamKind,
    schema: &DataSchema,
) -> Result<Box<dyn LatentDecoder<f64>>> {
    match kind {
        ParamKind::PcaHt => {
            let basis = io::read_pca_basis(&art.pca_basis_meta(), &art.pca_basis_matrix())?;
            let table = io::read_ht_table(&art.ht_table())?;
            Ok(Box::new(PcaHtDecoder { basis, table }))
        }
        ParamKind::Rae => {
            let w = io::read_rae_weights(&art.rae_weights_meta(), &art.rae_weights_params())?;
            Ok(Box::new(w))
        }
        ParamKind::None => {
            let _ = cfg;
            Ok(Box::new(IdentityDecoder { schema: schema.clone() }))
        }
    }
}

fn load_latents(
    art: &Artifacts,
    kind: ParamKind,
    prior: &Ensemble<f64>,
) -> Result<LatentEnsemble<f64>> {
    match kind {
        ParamKind::None => LatentEnsemble::new(prior.flat_matrix(), ParamTag::Identity),
        ParamKind::PcaHt => {
            let m = io::read_matrix_csv(&art.latents(kind), "latent", "member_")?;
            LatentEnsemble::new(m, ParamTag::PcaHt)
        }
        ParamKind::Rae => {
            let m = io::read_matrix_csv(&art.latents(kind), "latent", "member_")?;
            LatentEnsemble::new(m, ParamTag::Rae)
        }
    }
}

fn run_method(
    cfg: &RunConfig,
    art: &Artifacts,
    method: &MethodConfig,
    prior: &Ensemble<f64>,
    obs: &ObservationSet<f64>,
) -> Result<()> {
    let schema = prior.schema().clone();
    let mut seeds = BTreeMap::new();
    seeds.insert("forward".to_string(), cfg.forward_model.seed());
    seeds.insert("truth".to_string(), cfg.observations.truth_seed);
    if method.parameterization == ParamKind::Rae {
        seeds.insert("rae".to_string(), cfg.rae.as_ref().expect("validated").seed);
    }

    let mut alphas = None;
    let mut mean_mismatch = None;
    let mut n_samples = None;

    let mut posterior = match method.sampler {
        SamplerKind::Esmda => {
            let sect = cfg.esmda.as_ref().expect("validated");
            let esmda_cfg = EsmdaConfig {
                alphas: sect.alphas.clone().unwrap_or_else(|| default_alphas(sect.n_a)),
                seed: sect.seed,
                member_streams: None,
            };
            seeds.insert("sampler".to_string(), sect.seed);
            alphas = Some(esmda_cfg.alphas.clone());
            match method.parameterization {
                ParamKind::None => {
                    let out = esmda_update_data(prior, obs, &esmda_cfg)?;
                    mean_mismatch = Some(out.mean_mismatch);
                    out.posterior
                }
                kind => {
                    let decoder = load_decoder(cfg, art, kind, &schema)?;
                    let latents = load_latents(art, kind, prior)?;
                    let out = esmda_update_latent(&latents, decoder.as_ref(), obs, &esmda_cfg)?;
                    mean_mismatch = Some(out.mean_mismatch);
                    out.posterior
                }
            }
        }
        SamplerKind::Rml => {
            let sect = cfg.rml.as_ref().expect("validated");
            seeds.insert("sampler".to_string(), sect.seed);
            n_samples = Some(sect.n_samples);
            let rml_cfg = RmlConfig {
                max_iterations: sect.max_iterations,
                gradient_tolerance: sect.gradient_tolerance,
                fd_step: sect.fd_step,
                learning_rate: sect.learning_rate,
            };
            let decoder = load_decoder(cfg, art, method.parameterization, &schema)?;
            let latents = load_latents(art, method.parameterization, prior)?;
            let rng = DsiRng::from_seed(sect.seed);
            let members: Result<Vec<DataVector<f64>>> = (0..sect.n_samples)
                .map(|i| {
                    let xi = rml_sample(&latents, decoder.as_ref(), obs, &rng.child(i as u64), &rml_cfg)?;
                    decoder.decode(&xi)
                })
                .collect();
            Ensemble::new(schema.clone(), members?.into_iter().map(|d| d.values().clone()).collect())?
        }
    };

    if method.truncate {
        posterior = truncate(&posterior, &nonnegative_bounds(schema.n_qoi()))?;
    }

    io::write_ensemble_csv(&posterior, &art.posterior(&method.name))?;
    let manifest = MethodManifest {
        method: method.name.clone(),
        parameterization: method.parameterization,
        sampler: method.sampler,
        truncated: method.truncate,
        seeds,
        alphas,
        mean_mismatch,
        n_samples,
    };
    io::write_json(&manifest, &art.manifest(&method.name))
}

/// Stage 3: one posterior ensemble and manifest per configured method.
pub fn cmd_assimilate(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    let prior: Ensemble<f64> = io::read_ensemble_csv(&art.prior())?;
    let obs: ObservationSet<f64> = io::read_observations_json(&art.observations())?;
    for method in &cfg.methods {
        run_method(cfg, art, method, &prior, &obs)?;
    }
    Ok(())
}

/// Summary of the rejection-sampling run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RsSummary {
    pub n_proposals: usize,
    pub n_accepted: usize,
    pub acceptance_rate: f64,
    pub o_min: f64,
    pub seed: u64,
}

impl RsSummary {
    fn new(rs: &RsResult, seed: u64) -> Self {
        Self {
            n_proposals: rs.total,
            n_accepted: rs.n_accepted(),
            acceptance_rate: rs.n_accepted() as f64 / rs.total as f64,
            o_min: rs.o_min,
            seed,
        }
    }
}

/// Stage 4: rejection sampling over a fresh streamed prior.
pub fn cmd_rs(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    let obs: ObservationSet<f64> = io::read_observations_json(&art.observations())?;
    let schema = model_schema(cfg)?;
    let base = DsiRng::from_seed(cfg.rs.seed);
    let proposal_rng = base.child(0);
    let decision_rng = base.child(1);
    let (rs, accepted) = match &cfg.forward_model {
        ForwardModelConfig::Tank { tank, times, .. } => {
            let times = times.values();
            let generate = |i: usize| -> Result<DataVector<f64>> {
                let mut r = proposal_rng.stream(i as u64);
                simulate_tank(&sample_tank_params(tank, &mut r)?, &times)
            };
            rejection_sample_streamed(&schema, cfg.rs.n_proposals, &generate, &obs, &decision_rng)?
        }
        ForwardModelConfig::Linear { .. } => {
            let model = linear_model(cfg)?;
            let chol = Cholesky::new(model.prior_cov().clone())
                .ok_or_else(|| DsiError::numerical("prior covariance is not positive definite"))?;
            let l = chol.l();
            let mean = model.prior_mean().clone();
            let generate = |i: usize| -> Result<DataVector<f64>> {
                let mut r = proposal_rng.stream(i as u64);
                let z = DVector::from_fn(mean.len(), |_, _| standard_normal::<f64>(&mut r));
                simulate_linear(&model, &(&mean + &l * z))
            };
            rejection_sample_streamed(&schema, cfg.rs.n_proposals, &generate, &obs, &decision_rng)?
        }
    };
    io::write_json(&RsSummary::new(&rs, cfg.rs.seed), &art.rs_result())?;
    io::write_ensemble_csv(&accepted, &art.rs_accepted())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| DsiError::Io { path: path.display().to_string(), source: e })?;
    f.write_all(text.as_bytes())
        .map_err(|e| DsiError::Io { path: path.display().to_string(), source: e })
}

fn write_bands_csv(path: &Path, bands: &QuantileBands<f64>) -> Result<()> {
    let mut text = String::from("quantity,time,prob,value\n");
    let schema = bands.schema();
    for (k, p) in bands.probs().iter().enumerate() {
        let band = bands.band(k);
        for q in 0..schema.n_qoi() {
            for t in 0..schema.n_t() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    schema.quantity_names()[q],
                    schema.times()[t],
                    p,
                    fmt(band[(q, t)])
                ));
            }
        }
    }
    write_text(path, &text)
}

fn derived_ensemble(e: &Ensemble<f64>, name: &str) -> Result<Ensemble<f64>> {
    let expr = builtin_expr(e.schema(), name).ok_or_else(|| {
        DsiError::config(format!("derived quantity {name:?} is not defined for this schema"))
    })?;
    derived_quantity(e, name, &expr, DivisionPolicy::Clamp)
}

fn write_derived_bands(
    path: &Path,
    e: &Ensemble<f64>,
    names: &[String],
    probs: &[f64],
) -> Result<()> {
    let mut text = String::from("quantity,time,prob,value\n");
    for name in names {
        let de = derived_ensemble(e, name)?;
        let bands = quantile_bands(&de, probs)?;
        for (k, p) in bands.probs().iter().enumerate() {
            let band = bands.band(k);
            for t in 0..de.schema().n_t() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    name,
                    de.schema().times()[t],
                    p,
                    fmt(band[(0, t)])
                ));
            }
        }
    }
    write_text(path, &text)
}

fn write_crossplot(path: &Path, e: &Ensemble<f64>, cp: &CrossplotConfig) -> Result<()> {
    let schema = e.schema();
    let q = schema
        .quantity_index(&cp.quantity)
        .ok_or_else(|| DsiError::config(format!("unknown crossplot quantity {:?}", cp.quantity)))?;
    let find = |day: f64| -> Result<usize> {
        schema
            .times()
            .iter()
            .position(|t| (t - day).abs() <= 1e-9 * day.abs().max(1.0))
            .ok_or_else(|| DsiError::config(format!("day {day} is not on the time grid")))
    };
    let (ta, tb) = (find(cp.time_a)?, find(cp.time_b)?);
    let mut text = format!("member,{}_at_{},{}_at_{}\n", cp.quantity, cp.time_a, cp.quantity, cp.time_b);
    for (i, m) in e.iter_members().enumerate() {
        text.push_str(&format!("{i},{},{}\n", fmt(m[(q, ta)]), fmt(m[(q, tb)])));
    }
    write_text(path, &text)
}

fn write_corr_series(path: &Path, e: &Ensemble<f64>, a: &str, b: &str) -> Result<()> {
    let da = derived_ensemble(e, a)?;
    let db = derived_ensemble(e, b)?;
    let mut members = Vec::with_capacity(e.n_members());
    for i in 0..e.n_members() {
        let mut m = DMatrix::zeros(2, e.schema().n_t());
        m.row_mut(0).copy_from(&da.member_values(i).row(0));
        m.row_mut(1).copy_from(&db.member_values(i).row(0));
        members.push(m);
    }
    let schema = DataSchema::new(vec![a.to_string(), b.to_string()], e.schema().times().to_vec())?;
    let pair = Ensemble::new(schema, members)?;
    let series = corr_cov_series(&pair, 0, 1)?;
    let mut text = String::from("time,covariance,correlation\n");
    for (k, t) in series.times.iter().enumerate() {
        text.push_str(&format!("{t},{},{}\n", fmt(series.covariance[k]), fmt(series.correlation[k])));
    }
    write_text(path, &text)
}

/// KS table and ranking written by the evaluate stage.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub mahalanobis_energy: f64,
    pub achieved_energy: f64,
    pub basis_rank: usize,
    /// KS statistic of each method's Mahalanobis-distance CDF against the
    /// rejection-sampling reference.
    pub ks_vs_rs: BTreeMap<String, f64>,
    /// Method names sorted by ascending KS (best first).
    pub ranking: Vec<String>,
    pub n_members: BTreeMap<String, usize>,
    pub rs: RsSummary,
}

/// Stage 5: quantile bands, derived-quantity bands, cross-plots,
/// correlation series, Mahalanobis CDFs, and the KS summary.
pub fn cmd_evaluate(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    create_dir(&art.evaluate_dir())?;
    let prior: Ensemble<f64> = io::read_ensemble_csv(&art.prior())?;
    let rs_accepted: Ensemble<f64> = io::read_ensemble_csv(&art.rs_accepted())?;
    let rs_summary: RsSummary = io::read_json(&art.rs_result())?;
    let mut sources: Vec<(String, Ensemble<f64>)> =
        vec![("prior".into(), prior.clone()), ("rs".into(), rs_accepted.clone())];
    for m in &cfg.methods {
        sources.push((m.name.clone(), io::read_ensemble_csv(&art.posterior(&m.name))?));
    }

    let probs = &cfg.diagnostics.quantile_probs;
    for (name, e) in &sources {
        write_bands_csv(&art.bands(name), &quantile_bands(e, probs)?)?;
        if !cfg.diagnostics.derived.is_empty() {
            write_derived_bands(&art.derived_bands(name), e, &cfg.diagnostics.derived, probs)?;
        }
        if let Some(cp) = &cfg.diagnostics.crossplot {
            write_crossplot(&art.crossplot(name), e, cp)?;
        }
        for (a, b) in &cfg.diagnostics.corr_pairs {
            write_corr_series(&art.corr_series(a, b, name), e, a, b)?;
        }
    }

    let basis = fit_mahalanobis(&prior, cfg.diagnostics.mahalanobis_energy)?;
    let named: Vec<(&str, &Ensemble<f64>)> = std::iter::once(("rs", &rs_accepted))
        .chain(cfg.methods.iter().map(|m| {
            let e = &sources.iter().find(|(n, _)| n == &m.name).expect("loaded").1;
            (m.name.as_str(), e)
        }))
        .collect();
    let cmp = dm_cdf_compare(&basis, &named)?;
    for (k, name) in cmp.names.iter().enumerate() {
        let dm = &cmp.sorted_dm[k];
        let m = DMatrix::from_column_slice(dm.len(), 1, dm);
        io::write_matrix_csv(&m, "rank", "dm_", &art.dm_cdf(name))?;
    }

    let mut ks_vs_rs = BTreeMap::new();
    for (k, name) in cmp.names.iter().enumerate().skip(1) {
        ks_vs_rs.insert(name.clone(), cmp.ks[0][k]);
    }
    let mut ranking: Vec<String> = ks_vs_rs.keys().cloned().collect();
    ranking.sort_by(|a, b| ks_vs_rs[a].partial_cmp(&ks_vs_rs[b]).expect("finite KS"));
    let mut n_members = BTreeMap::new();
    for (name, e) in &sources {
        n_members.insert(name.clone(), e.n_members());
    }
    let summary = EvaluateSummary {
        mahalanobis_energy: cfg.diagnostics.mahalanobis_energy,
        achieved_energy: basis.achieved_energy(),
        basis_rank: basis.sigma().len(),
        ks_vs_rs,
        ranking,
        n_members,
        rs: rs_summary,
    };
    io::write_json(&summary, &art.summary())
}

/// All stages in order.
pub fn cmd_pipeline(cfg: &RunConfig, art: &Artifacts) -> Result<()> {
    cmd_generate_prior(cfg, art)?;
    cmd_train(cfg, art)?;
    cmd_assimilate(cfg, art)?;
    cmd_rs(cfg, art)?;
    cmd_evaluate(cfg, art)
}

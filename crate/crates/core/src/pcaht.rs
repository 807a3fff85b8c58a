//! PCA parameterization with marginal histogram transformation.
//!
//! The centered, scaled data matrix `D` (columns `(d_i - mean) / sqrt(N_r -
//! 1)`) is decomposed as `D = U S V^T`. With `Phi = U_l S_l` holding the
//! leading `l` modes, a data vector is represented as `d = Phi xi + mean`,
//! and the whitened encoding `xi = S_l^{-1} U_l^T (d - mean)` gives latent
//! components with zero sample mean and unit sample variance over the
//! training ensemble.
//!
//! Truncated PCA is Gaussian in character: decoded vectors can overshoot
//! physical bounds and lose the non-Gaussian marginal shape of the prior.
//! The histogram transformation repairs the marginals component by
//! component: `d~_j = F_j^{-1}( Phi_gauss_j(d^PCA_j) )`, where `Phi_gauss_j`
//! is the Gaussian CDF with the prior mean and the PCA-implied standard
//! deviation `sqrt((Phi Phi^T)_jj)`, and `F_j` is the empirical CDF of the
//! prior samples of component `j` (linear interpolation between order
//! statistics, clamped to the sample range). It is monotone per component,
//! so it preserves component-wise order but not linear combinations such as
//! rate sums.

use nalgebra::{DMatrix, DVector};

use crate::data::{DataSchema, DataVector, Ensemble};
use crate::error::{DsiError, Result};
use crate::linalg::energy_rank;
use crate::scalar::Scalar;
use crate::stats::{empirical_quantile, normal_cdf, sort_scalars};

/// How many PCA modes to retain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaTruncation {
    /// Smallest count whose squared singular values hold at least this
    /// fraction of the total.
    Energy(f64),
    /// Fixed count.
    Components(usize),
}

/// Truncated PCA basis of a prior ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis<S: Scalar> {
    schema: DataSchema,
    mean: DVector<S>,
    /// `n_f x n_l`, `Phi = U_l S_l`.
    phi: DMatrix<S>,
    /// Full singular spectrum of the centered matrix, descending.
    singular_values: Vec<S>,
    n_l: usize,
    /// Achieved cumulative energy of the retained block.
    energy: f64,
}

impl<S: Scalar> PcaBasis<S> {
    /// Rebuilds a basis from its stored parts, revalidating the invariants.
    pub fn from_parts(
        schema: DataSchema,
        mean: DVector<S>,
        phi: DMatrix<S>,
        singular_values: Vec<S>,
    ) -> Result<Self> {
        if mean.len() != schema.n_f() || phi.nrows() != schema.n_f() {
            return Err(DsiError::schema("basis dimensions do not match schema"));
        }
        let n_l = phi.ncols();
        if n_l == 0 || n_l > singular_values.len() {
            return Err(DsiError::config(
                "retained count must be in [1, spectrum length]",
            ));
        }
        let s: Vec<f64> = singular_values.iter().map(|v| v.as_f64()).collect();
        if s.windows(2).any(|w| w[0] < w[1]) {
            return Err(DsiError::numerical(
                "singular values not in descending order".to_string(),
            ));
        }
        if s[n_l - 1] <= 0.0 {
            return Err(DsiError::numerical(
                "zero singular value in retained block; lower the retained count".to_string(),
            ));
        }
        let total: f64 = s.iter().map(|v| v * v).sum();
        let kept: f64 = s[..n_l].iter().map(|v| v * v).sum();
        Ok(PcaBasis {
            schema,
            mean,
            phi,
            singular_values,
            n_l,
            energy: kept / total,
        })
    }

    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    /// Retained mode count `N_l`.
    pub fn n_l(&self) -> usize {
        self.n_l
    }

    /// Prior mean in flattened order.
    pub fn mean(&self) -> &DVector<S> {
        &self.mean
    }

    /// Retained modes `Phi = U_l S_l`.
    pub fn phi(&self) -> &DMatrix<S> {
        &self.phi
    }

    /// Full singular spectrum, descending.
    pub fn singular_values(&self) -> &[S] {
        &self.singular_values
    }

    /// Achieved cumulative energy fraction of the retained block.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// PCA-implied standard deviation of component `j`:
    /// `sqrt((Phi Phi^T)_jj)`, the row norm of `Phi`.
    pub fn implied_std(&self, j: usize) -> S {
        self.phi.row(j).norm()
    }
}

/// Fits a truncated PCA basis to a prior ensemble of at least two members.
pub fn fit_pca<S: Scalar>(e: &Ensemble<S>, trunc: PcaTruncation) -> Result<PcaBasis<S>> {
    let d = crate::data::centered_data_matrix(e)?;
    let mean = crate::data::ensemble_mean(e).flat();
    let svd = d.svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let svals: Vec<S> = svd.singular_values.iter().copied().collect();
    if svals.windows(2).any(|w| w[0] < w[1]) {
        return Err(DsiError::numerical(
            "SVD returned an unsorted spectrum".to_string(),
        ));
    }
    let max_sv = svals.first().map(|s| s.as_f64()).unwrap_or(0.0);
    if max_sv <= 0.0 {
        return Err(DsiError::numerical(
            "degenerate ensemble: centered data matrix is zero".to_string(),
        ));
    }
    let n_l = match trunc {
        PcaTruncation::Energy(energy) => energy_rank(&svals, energy)?,
        PcaTruncation::Components(k) => {
            if k == 0 || k > svals.len() {
                return Err(DsiError::config(format!(
                    "retained count {k} outside [1, {}]",
                    svals.len()
                )));
            }
            if svals[k - 1].as_f64() <= 0.0 {
                return Err(DsiError::numerical(
                    "zero singular value in retained block; lower the retained count".to_string(),
                ));
            }
            k
        }
    };
    let mut phi = DMatrix::zeros(e.schema().n_f(), n_l);
    for l in 0..n_l {
        phi.set_column(l, &(u.column(l) * svals[l]));
    }
    PcaBasis::from_parts(e.schema().clone(), mean, phi, svals)
}

/// Whitened encoding `xi = S_l^{-1} U_l^T (d - mean)`.
///
/// Computed as `xi_l = phi_l . (d - mean) / sigma_l^2` since `phi_l =
/// sigma_l u_l`.
pub fn pca_encode<S: Scalar>(basis: &PcaBasis<S>, d: &DataVector<S>) -> Result<DVector<S>> {
    if d.schema() != &basis.schema {
        return Err(DsiError::schema("data vector schema differs from basis"));
    }
    let v = d.flat() - &basis.mean;
    Ok(DVector::from_fn(basis.n_l, |l, _| {
        let s = basis.singular_values[l];
        basis.phi.column(l).dot(&v) / (s * s)
    }))
}

/// Decoding `d = Phi xi + mean`.
pub fn pca_decode<S: Scalar>(basis: &PcaBasis<S>, xi: &DVector<S>) -> Result<DataVector<S>> {
    if xi.len() != basis.n_l {
        return Err(DsiError::schema(format!(
            "latent vector has length {}, basis retains {}",
            xi.len(),
            basis.n_l
        )));
    }
    let flat = &basis.phi * xi + &basis.mean;
    DataVector::from_flat(basis.schema.clone(), &flat)
}

/// Encodes every member, returning an `n_l x n_r` latent matrix.
pub fn pca_encode_ensemble<S: Scalar>(
    basis: &PcaBasis<S>,
    e: &Ensemble<S>,
) -> Result<DMatrix<S>> {
    if e.schema() != &basis.schema {
        return Err(DsiError::schema("ensemble schema differs from basis"));
    }
    let mut out = DMatrix::zeros(basis.n_l, e.n_members());
    for j in 0..e.n_members() {
        out.set_column(j, &pca_encode(basis, &e.member(j))?);
    }
    Ok(out)
}

/// Empirical marginal CDF table with the Gaussian reference parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCdfTable<S: Scalar> {
    /// `n_f x n_r`; row `j` holds the sorted prior samples of component `j`.
    sorted: DMatrix<S>,
    /// Prior mean per component (reference Gaussian mean).
    gauss_mean: DVector<S>,
    /// PCA-implied standard deviation per component.
    gauss_std: DVector<S>,
}

impl<S: Scalar> MarginalCdfTable<S> {
    /// Rebuilds a table from stored parts, validating shapes and row order.
    pub fn from_parts(
        sorted: DMatrix<S>,
        gauss_mean: DVector<S>,
        gauss_std: DVector<S>,
    ) -> Result<Self> {
        let n_f = sorted.nrows();
        if gauss_mean.len() != n_f || gauss_std.len() != n_f {
            return Err(DsiError::schema("table part lengths disagree"));
        }
        if sorted.ncols() == 0 {
            return Err(DsiError::config("table needs at least one sample"));
        }
        for j in 0..n_f {
            let row = sorted.row(j);
            for c in 1..row.len() {
                if row[c] < row[c - 1] {
                    return Err(DsiError::numerical(format!(
                        "table row {j} is not sorted"
                    )));
                }
            }
        }
        if gauss_std.iter().any(|s| *s < S::zero() || !s.is_finite()) {
            return Err(DsiError::numerical(
                "negative or non-finite reference std".to_string(),
            ));
        }
        Ok(MarginalCdfTable {
            sorted,
            gauss_mean,
            gauss_std,
        })
    }

    /// Number of flattened components.
    pub fn n_f(&self) -> usize {
        self.sorted.nrows()
    }

    /// Number of prior samples per component.
    pub fn n_samples(&self) -> usize {
        self.sorted.ncols()
    }

    /// Sorted prior samples, one row per component.
    pub fn sorted(&self) -> &DMatrix<S> {
        &self.sorted
    }

    /// Reference Gaussian means.
    pub fn gauss_mean(&self) -> &DVector<S> {
        &self.gauss_mean
    }

    /// Reference Gaussian standard deviations.
    pub fn gauss_std(&self) -> &DVector<S> {
        &self.gauss_std
    }
}

/// Builds the histogram-transformation table from the prior ensemble and the
/// PCA basis fitted to it.
///
/// The table is fitted once from the prior and reused unchanged for every
/// posterior decode.
pub fn fit_ht<S: Scalar>(e: &Ensemble<S>, basis: &PcaBasis<S>) -> Result<MarginalCdfTable<S>> {
    if e.schema() != &basis.schema {
        return Err(DsiError::schema("ensemble schema differs from basis"));
    }
    let flat = e.flat_matrix();
    let n_f = basis.schema.n_f();
    let mut sorted = DMatrix::zeros(n_f, e.n_members());
    let mut row = vec![S::zero(); e.n_members()];
    for j in 0..n_f {
        for (c, v) in flat.row(j).iter().enumerate() {
            row[c] = *v;
        }
        sort_scalars(&mut row);
        for (c, v) in row.iter().enumerate() {
            sorted[(j, c)] = *v;
        }
    }
    let gauss_std = DVector::from_fn(n_f, |j, _| basis.implied_std(j));
    MarginalCdfTable::from_parts(sorted, basis.mean.clone(), gauss_std)
}

/// Applies the histogram transformation to one (typically PCA-decoded) data
/// vector.
///
/// Per component: `u = Phi_gauss((x - mean_j) / std_j)`, then the empirical
/// quantile of the prior samples at `u`. Outputs are clamped to the prior
/// sample range by construction. A component with zero reference std maps
/// every input to the prior median, which for a constant prior component is
/// that constant.
pub fn apply_ht<S: Scalar>(table: &MarginalCdfTable<S>, d: &DataVector<S>) -> Result<DataVector<S>> {
    let schema = d.schema().clone();
    if schema.n_f() != table.n_f() {
        return Err(DsiError::schema(
            "data vector length differs from table component count",
        ));
    }
    let flat = d.flat();
    let mut out = DVector::zeros(flat.len());
    let n = table.n_samples();
    let mut row = vec![S::zero(); n];
    for j in 0..flat.len() {
        for (c, v) in table.sorted.row(j).iter().enumerate() {
            row[c] = *v;
        }
        let std = table.gauss_std[j];
        let u = if std > S::zero() {
            normal_cdf(flat[j].as_f64(), table.gauss_mean[j].as_f64(), std.as_f64())
        } else {
            0.5
        };
        out[j] = empirical_quantile(&row, u.clamp(0.0, 1.0))?;
    }
    DataVector::from_flat(schema, &out)
}

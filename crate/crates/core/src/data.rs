//! Core data model: schemas, data vectors, ensembles and observation sets.
//!
//! A *data vector* holds every simulated quantity of interest at every report
//! time for one realization. Quantities and times are fixed by a
//! [`DataSchema`]; the flattened layout is quantity-major (all times of
//! quantity 0, then all times of quantity 1, ...), and every flattened
//! artifact in this crate uses that order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsiError, Result};
use crate::rng::standard_normal;
use crate::scalar::Scalar;

/// Names of the simulated quantities and the shared report-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    quantity_names: Vec<String>,
    times: Vec<f64>,
}

impl DataSchema {
    /// Validates names (non-empty, unique, CSV-safe) and times (finite,
    /// strictly increasing).
    pub fn new(quantity_names: Vec<String>, times: Vec<f64>) -> Result<Self> {
        if quantity_names.is_empty() {
            return Err(DsiError::schema("schema needs at least one quantity"));
        }
        if times.is_empty() {
            return Err(DsiError::schema("schema needs at least one report time"));
        }
        for name in &quantity_names {
            if name.is_empty() || name.contains(',') || name.contains('\n') {
                return Err(DsiError::schema(format!(
                    "quantity name {name:?} is empty or contains CSV delimiters"
                )));
            }
        }
        for (i, a) in quantity_names.iter().enumerate() {
            if quantity_names[i + 1..].contains(a) {
                return Err(DsiError::schema(format!("duplicate quantity name {a:?}")));
            }
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(DsiError::schema("non-finite report time"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DsiError::schema(
                "report times must be strictly increasing",
            ));
        }
        Ok(DataSchema {
            quantity_names,
            times,
        })
    }

    /// Number of quantities.
    pub fn n_qoi(&self) -> usize {
        self.quantity_names.len()
    }

    /// Number of report times.
    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    /// Flattened length `n_qoi * n_t`.
    pub fn n_f(&self) -> usize {
        self.n_qoi() * self.n_t()
    }

    /// Quantity names in order.
    pub fn quantity_names(&self) -> &[String] {
        &self.quantity_names
    }

    /// Report times in days.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Position of `(quantity, time)` in the flattened layout.
    pub fn flat_index(&self, quantity: usize, time: usize) -> usize {
        debug_assert!(quantity < self.n_qoi() && time < self.n_t());
        quantity * self.n_t() + time
    }

    /// Index of a quantity by name.
    pub fn quantity_index(&self, name: &str) -> Option<usize> {
        self.quantity_names.iter().position(|n| n == name)
    }

    /// Index of a report time by exact value.
    pub fn time_index(&self, time: f64) -> Option<usize> {
        self.times.iter().position(|&t| t == time)
    }
}

/// One realization: an `n_qoi x n_t` value matrix bound to its schema.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector<S: Scalar> {
    schema: DataSchema,
    values: DMatrix<S>,
}

impl<S: Scalar> DataVector<S> {
    /// Validates the shape and that every entry is finite.
    pub fn new(schema: DataSchema, values: DMatrix<S>) -> Result<Self> {
        Self::check_shape(&schema, &values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DsiError::schema("non-finite entry in data vector"));
        }
        Ok(DataVector { schema, values })
    }

    /// Shape-checked constructor that admits non-finite entries.
    ///
    /// Only derived diagnostic series use this: NaN marks components where a
    /// guarded division was suppressed, and downstream statistics exclude
    /// those markers explicitly.
    pub fn new_allow_nonfinite(schema: DataSchema, values: DMatrix<S>) -> Result<Self> {
        Self::check_shape(&schema, &values)?;
        Ok(DataVector { schema, values })
    }

    fn check_shape(schema: &DataSchema, values: &DMatrix<S>) -> Result<()> {
        if values.nrows() != schema.n_qoi() || values.ncols() != schema.n_t() {
            return Err(DsiError::schema(format!(
                "value matrix is {}x{}, schema expects {}x{}",
                values.nrows(),
                values.ncols(),
                schema.n_qoi(),
                schema.n_t()
            )));
        }
        Ok(())
    }

    /// Rebuilds a data vector from its flattened (quantity-major) form.
    pub fn from_flat(schema: DataSchema, flat: &DVector<S>) -> Result<Self> {
        if flat.len() != schema.n_f() {
            return Err(DsiError::schema(format!(
                "flat vector has length {}, schema expects {}",
                flat.len(),
                schema.n_f()
            )));
        }
        let (nq, nt) = (schema.n_qoi(), schema.n_t());
        let values = DMatrix::from_fn(nq, nt, |q, t| flat[q * nt + t]);
        DataVector::new(schema, values)
    }

    /// Flattened copy in quantity-major order.
    pub fn flat(&self) -> DVector<S> {
        flatten(&self.values)
    }

    /// Value of `quantity` at report-time index `time`.
    pub fn value(&self, quantity: usize, time: usize) -> S {
        self.values[(quantity, time)]
    }

    /// The underlying `n_qoi x n_t` matrix.
    pub fn values(&self) -> &DMatrix<S> {
        &self.values
    }

    /// The schema this vector conforms to.
    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }
}

/// Flattens an `n_qoi x n_t` member matrix in quantity-major order.
pub(crate) fn flatten<S: Scalar>(values: &DMatrix<S>) -> DVector<S> {
    let (nq, nt) = (values.nrows(), values.ncols());
    DVector::from_fn(nq * nt, |i, _| values[(i / nt, i % nt)])
}

/// Reshapes a flattened vector back into an `n_qoi x n_t` member matrix.
pub(crate) fn unflatten<S: Scalar>(flat: &DVector<S>, nq: usize, nt: usize) -> DMatrix<S> {
    debug_assert_eq!(flat.len(), nq * nt);
    DMatrix::from_fn(nq, nt, |q, t| flat[q * nt + t])
}

/// An ordered collection of realizations sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<S: Scalar> {
    schema: DataSchema,
    members: Vec<DMatrix<S>>,
}

impl<S: Scalar> Ensemble<S> {
    /// Validates that at least one member is present and that every member
    /// matches the schema shape with finite entries.
    pub fn new(schema: DataSchema, members: Vec<DMatrix<S>>) -> Result<Self> {
        if members.is_empty() {
            return Err(DsiError::schema("ensemble needs at least one member"));
        }
        for (i, m) in members.iter().enumerate() {
            if m.nrows() != schema.n_qoi() || m.ncols() != schema.n_t() {
                return Err(DsiError::schema(format!(
                    "member {i} is {}x{}, schema expects {}x{}",
                    m.nrows(),
                    m.ncols(),
                    schema.n_qoi(),
                    schema.n_t()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(DsiError::schema(format!("non-finite entry in member {i}")));
            }
        }
        Ok(Ensemble { schema, members })
    }

    /// Builds an ensemble from data vectors that must share one schema.
    pub fn from_members(members: Vec<DataVector<S>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| DsiError::schema("ensemble needs at least one member"))?;
        let schema = first.schema.clone();
        for (i, m) in members.iter().enumerate() {
            if m.schema != schema {
                return Err(DsiError::schema(format!(
                    "member {i} does not share the ensemble schema"
                )));
            }
        }
        let members = members.into_iter().map(|m| m.values).collect();
        Ok(Ensemble { schema, members })
    }

    /// Builds an ensemble from a flattened `n_f x n_r` matrix (members as
    /// columns).
    pub fn from_flat_matrix(schema: DataSchema, flat: &DMatrix<S>) -> Result<Self> {
        if flat.nrows() != schema.n_f() {
            return Err(DsiError::schema(format!(
                "flat matrix has {} rows, schema expects {}",
                flat.nrows(),
                schema.n_f()
            )));
        }
        let members = (0..flat.ncols())
            .map(|j| unflatten(&DVector::from(flat.column(j).clone_owned()), schema.n_qoi(), schema.n_t()))
            .collect();
        Ensemble::new(schema, members)
    }

    /// Number of members.
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    /// The shared schema.
    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    /// Member `i` as a data vector (copies the values).
    pub fn member(&self, i: usize) -> DataVector<S> {
        DataVector {
            schema: self.schema.clone(),
            values: self.members[i].clone(),
        }
    }

    /// Member `i` as its raw value matrix.
    pub fn member_values(&self, i: usize) -> &DMatrix<S> {
        &self.members[i]
    }

    /// Member `i` flattened in quantity-major order.
    pub fn member_flat(&self, i: usize) -> DVector<S> {
        flatten(&self.members[i])
    }

    /// All members flattened into an `n_f x n_r` matrix.
    pub fn flat_matrix(&self) -> DMatrix<S> {
        let n_f = self.schema.n_f();
        let mut out = DMatrix::zeros(n_f, self.members.len());
        for (j, m) in self.members.iter().enumerate() {
            out.set_column(j, &flatten(m));
        }
        out
    }

    /// Iterates over member value matrices.
    pub fn iter_members(&self) -> impl Iterator<Item = &DMatrix<S>> {
        self.members.iter()
    }

    /// Appends a member after schema validation.
    pub fn push_member(&mut self, member: DataVector<S>) -> Result<()> {
        if member.schema != self.schema {
            return Err(DsiError::schema(
                "pushed member does not share the ensemble schema",
            ));
        }
        self.members.push(member.values);
        Ok(())
    }
}

/// Observed data: `(quantity, time)` index pairs, observed values and
/// per-entry measurement error standard deviations.
///
/// The measurement error covariance is `diag(error_std^2)`. Zero standard
/// deviations are admitted here (a zero-noise perturbation is the identity);
/// operations that need the inverse covariance reject them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ObservationSet<S: Scalar> {
    entries: Vec<(usize, usize)>,
    values: Vec<S>,
    error_std: Vec<S>,
}

impl<S: Scalar> ObservationSet<S> {
    /// Validates matching lengths, entry uniqueness, finite values and
    /// non-negative finite error standard deviations.
    pub fn new(entries: Vec<(usize, usize)>, values: Vec<S>, error_std: Vec<S>) -> Result<Self> {
        if entries.len() != values.len() || entries.len() != error_std.len() {
            return Err(DsiError::schema(format!(
                "observation lengths disagree: {} entries, {} values, {} error stds",
                entries.len(),
                values.len(),
                error_std.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[i + 1..].contains(e) {
                return Err(DsiError::schema(format!(
                    "duplicate observation entry ({}, {})",
                    e.0, e.1
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DsiError::schema("non-finite observed value"));
        }
        if error_std.iter().any(|s| !s.is_finite() || *s < S::zero()) {
            return Err(DsiError::schema(
                "error standard deviations must be finite and non-negative",
            ));
        }
        Ok(ObservationSet {
            entries,
            values,
            error_std,
        })
    }

    /// Number of observed entries.
    pub fn n_hm(&self) -> usize {
        self.entries.len()
    }

    /// The `(quantity, time)` index pairs.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Observed values in entry order.
    pub fn values(&self) -> DVector<S> {
        DVector::from_column_slice(&self.values)
    }

    /// Error standard deviations in entry order.
    pub fn error_std(&self) -> DVector<S> {
        DVector::from_column_slice(&self.error_std)
    }

    /// Checks that every entry addresses a valid `(quantity, time)` pair.
    pub fn validate_against(&self, schema: &DataSchema) -> Result<()> {
        for &(q, t) in &self.entries {
            if q >= schema.n_qoi() || t >= schema.n_t() {
                return Err(DsiError::schema(format!(
                    "observation entry ({q}, {t}) outside schema {}x{}",
                    schema.n_qoi(),
                    schema.n_t()
                )));
            }
        }
        Ok(())
    }

    /// Requires strictly positive error standard deviations, as needed by
    /// operations that invert the measurement covariance.
    pub fn require_positive_error(&self) -> Result<()> {
        if self.error_std.iter().any(|s| *s <= S::zero()) {
            return Err(DsiError::config(
                "this operation needs strictly positive error standard deviations",
            ));
        }
        Ok(())
    }
}

/// Extracts the observed components of one realization, in entry order.
pub fn select_hm<S: Scalar>(d: &DataVector<S>, obs: &ObservationSet<S>) -> Result<DVector<S>> {
    obs.validate_against(&d.schema)?;
    Ok(DVector::from_iterator(
        obs.n_hm(),
        obs.entries.iter().map(|&(q, t)| d.values[(q, t)]),
    ))
}

/// Observed components of every member, as an `n_hm x n_r` matrix.
pub fn select_hm_matrix<S: Scalar>(
    e: &Ensemble<S>,
    obs: &ObservationSet<S>,
) -> Result<DMatrix<S>> {
    obs.validate_against(&e.schema)?;
    let mut out = DMatrix::zeros(obs.n_hm(), e.n_members());
    for (j, m) in e.members.iter().enumerate() {
        for (i, &(q, t)) in obs.entries.iter().enumerate() {
            out[(i, j)] = m[(q, t)];
        }
    }
    Ok(out)
}

/// Returns a copy of `obs` with values perturbed by N(0, diag(error_std^2)).
///
/// One standard-normal draw is consumed per entry, in entry order.
pub fn perturb_observations<S: Scalar>(
    obs: &ObservationSet<S>,
    rng: &mut impl Rng,
) -> ObservationSet<S> {
    let values = obs
        .values
        .iter()
        .zip(&obs.error_std)
        .map(|(&v, &s)| v + s * standard_normal::<S>(rng))
        .collect();
    ObservationSet {
        entries: obs.entries.clone(),
        values,
        error_std: obs.error_std.clone(),
    }
}

/// Component-wise ensemble mean.
pub fn ensemble_mean<S: Scalar>(e: &Ensemble<S>) -> DataVector<S> {
    let mut mean = DMatrix::zeros(e.schema.n_qoi(), e.schema.n_t());
    for m in &e.members {
        mean += m;
    }
    mean /= S::of_f64(e.n_members() as f64);
    DataVector {
        schema: e.schema.clone(),
        values: mean,
    }
}

/// Centered, scaled data matrix: column `i` is `(d_i - mean) / sqrt(N_r - 1)`
/// in flattened order, so `D D^T` is the unbiased sample covariance.
pub fn centered_data_matrix<S: Scalar>(e: &Ensemble<S>) -> Result<DMatrix<S>> {
    let n_r = e.n_members();
    if n_r < 2 {
        return Err(DsiError::config(
            "centered data matrix needs at least two members",
        ));
    }
    let mean = ensemble_mean(e);
    let mean_flat = mean.flat();
    let scale = S::one() / S::of_f64(((n_r - 1) as f64).sqrt());
    let mut out = DMatrix::zeros(e.schema.n_f(), n_r);
    for (j, m) in e.members.iter().enumerate() {
        let col = (flatten(m) - &mean_flat) * scale;
        out.set_column(j, &col);
    }
    Ok(out)
}

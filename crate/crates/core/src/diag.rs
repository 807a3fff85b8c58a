//! Statistical evaluation of ensembles: quantile bands, derived quantities
//! over an expression grammar, correlation and covariance time series, and
//! Mahalanobis-distance CDFs in an energy-truncated SVD basis.

use nalgebra::{DMatrix, DVector};

use crate::data::{centered_data_matrix, ensemble_mean, DataSchema, DataVector, Ensemble};
use crate::error::{DsiError, Result};
use crate::linalg::energy_rank;
use crate::scalar::Scalar;
use crate::stats::{empirical_quantile, ks_two_sample, sort_scalars};

/// Guard threshold for divisions inside derived expressions.
pub const DIVISION_GUARD: f64 = 1e-12;

/// Per-component empirical quantiles of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBands<S: Scalar> {
    schema: DataSchema,
    probs: Vec<f64>,
    /// One `n_qoi x n_t` matrix per probability, in `probs` order.
    bands: Vec<DMatrix<S>>,
}

impl<S: Scalar> QuantileBands<S> {
    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn band(&self, p_index: usize) -> &DMatrix<S> {
        &self.bands[p_index]
    }
}

/// Linear-interpolated empirical quantiles (plotting position
/// `(i-1)/(N-1)`) of every `(quantity, time)` component. Bands are
/// per-step order statistics, so one band may follow different members at
/// different steps.
pub fn quantile_bands<S: Scalar>(e: &Ensemble<S>, probs: &[f64]) -> Result<QuantileBands<S>> {
    if probs.is_empty() {
        return Err(DsiError::config("quantile bands need at least one probability"));
    }
    if probs.iter().any(|p| !(0.0 < *p && *p < 1.0)) {
        return Err(DsiError::config("quantile probabilities must sit inside (0, 1)"));
    }
    if e.n_members() < 2 {
        return Err(DsiError::config("quantile bands need at least two members"));
    }
    let (nq, nt) = (e.schema().n_qoi(), e.schema().n_t());
    let mut bands = vec![DMatrix::zeros(nq, nt); probs.len()];
    let mut column = Vec::with_capacity(e.n_members());
    for q in 0..nq {
        for t in 0..nt {
            column.clear();
            column.extend(e.iter_members().map(|m| m[(q, t)]));
            sort_scalars(&mut column);
            for (k, &p) in probs.iter().enumerate() {
                bands[k][(q, t)] = empirical_quantile(&column, p)?;
            }
        }
    }
    Ok(QuantileBands { schema: e.schema().clone(), probs: probs.to_vec(), bands })
}

/// What to do when a derived expression divides by a value smaller than
/// [`DIVISION_GUARD`] in magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisionPolicy {
    /// Emit a NaN null-marker; downstream statistics must skip it.
    NullMarker,
    /// Clamp the divisor to the guard threshold, keeping its sign.
    Clamp,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Qty(usize),
    Sum(Vec<usize>),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| DsiError::config(format!("bad number '{s}' in expression")))?;
                out.push(Token::Num(v));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            _ => {
                return Err(DsiError::config(format!("unexpected character '{c}' in expression")));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    schema: &'a DataSchema,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<()> {
        match self.next() {
            Some(ref t) if t == want => Ok(()),
            other => Err(DsiError::config(format!("expected {what}, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        while let Some(t) = self.peek() {
            match t {
                Token::Plus => {
                    self.next();
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.next();
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.factor()?;
        while let Some(t) = self.peek() {
            match t {
                Token::Star => {
                    self.next();
                    acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Token::Slash => {
                    self.next();
                    acc = Expr::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::Minus) => Ok(Expr::Neg(Box::new(self.factor()?))),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(&Token::RParen, "')'")?;
                Ok(inner)
            }
            Some(Token::Ident(name)) if name == "sum" => {
                self.expect(&Token::LParen, "'(' after sum")?;
                let prefix = match self.next() {
                    Some(Token::Ident(p)) => p,
                    other => {
                        return Err(DsiError::config(format!(
                            "expected a quantity prefix inside sum(), found {other:?}"
                        )));
                    }
                };
                self.expect(&Token::Star, "'*' closing the sum prefix")?;
                self.expect(&Token::RParen, "')'")?;
                let indices: Vec<usize> = self
                    .schema
                    .quantity_names()
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| n.starts_with(&prefix))
                    .map(|(q, _)| q)
                    .collect();
                if indices.is_empty() {
                    return Err(DsiError::config(format!(
                        "sum({prefix}*) matches no quantity in the schema"
                    )));
                }
                Ok(Expr::Sum(indices))
            }
            Some(Token::Ident(name)) => match self.schema.quantity_index(&name) {
                Some(q) => Ok(Expr::Qty(q)),
                None => Err(DsiError::config(format!(
                    "unknown quantity '{name}'; schema has {:?}",
                    self.schema.quantity_names()
                ))),
            },
            other => Err(DsiError::config(format!("unexpected token {other:?} in expression"))),
        }
    }
}

fn parse_expr(schema: &DataSchema, text: &str) -> Result<Expr> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(DsiError::config("empty expression"));
    }
    let mut p = Parser { tokens, pos: 0, schema };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(DsiError::config(format!(
            "trailing tokens after expression: {:?}",
            &p.tokens[p.pos..]
        )));
    }
    Ok(e)
}

fn eval<S: Scalar>(expr: &Expr, member: &DMatrix<S>, t: usize, policy: DivisionPolicy) -> S {
    match expr {
        Expr::Num(v) => S::of_f64(*v),
        Expr::Qty(q) => member[(*q, t)],
        Expr::Sum(qs) => qs.iter().map(|&q| member[(q, t)]).sum(),
        Expr::Neg(a) => -eval(a, member, t, policy),
        Expr::Add(a, b) => eval(a, member, t, policy) + eval(b, member, t, policy),
        Expr::Sub(a, b) => eval(a, member, t, policy) - eval(b, member, t, policy),
        Expr::Mul(a, b) => eval(a, member, t, policy) * eval(b, member, t, policy),
        Expr::Div(a, b) => {
            let num = eval(a, member, t, policy);
            let den = eval(b, member, t, policy);
            let guard = S::of_f64(DIVISION_GUARD);
            if den.abs() < guard {
                match policy {
                    DivisionPolicy::NullMarker => S::of_f64(f64::NAN),
                    DivisionPolicy::Clamp => {
                        let sign = if den < S::zero() { -S::one() } else { S::one() };
                        num / (sign * guard)
                    }
                }
            } else {
                num / den
            }
        }
    }
}

/// Evaluates `expr` over every member and time step, producing a
/// single-quantity ensemble named `name` on the same time grid.
///
/// The grammar is `+`, `-`, `*`, `/`, unary minus, parentheses, numeric
/// literals, quantity names, and `sum(PREFIX*)` over every quantity whose
/// name starts with `PREFIX`. Divisions by magnitudes below
/// [`DIVISION_GUARD`] follow `policy`.
pub fn derived_quantity<S: Scalar>(
    e: &Ensemble<S>,
    name: &str,
    expr_text: &str,
    policy: DivisionPolicy,
) -> Result<Ensemble<S>> {
    let expr = parse_expr(e.schema(), expr_text)?;
    let schema = DataSchema::new(vec![name.to_string()], e.schema().times().to_vec())?;
    let nt = e.schema().n_t();
    let members: Result<Vec<DataVector<S>>> = e
        .iter_members()
        .map(|m| {
            let row = DMatrix::from_fn(1, nt, |_, t| eval(&expr, m, t, policy));
            DataVector::new_allow_nonfinite(schema.clone(), row)
        })
        .collect();
    Ensemble::from_members(members?)
}

/// Expression text of a built-in derived quantity, or `None` when the name
/// is not recognized against this schema.
///
/// Recognized: `field_injection`, `field_production`, `field_balance`,
/// `total_liquid_<P>` and `water_cut_<P>` for any producer suffix `<P>`
/// with both `WPR_<P>` and `OPR_<P>` present.
pub fn builtin_expr(schema: &DataSchema, name: &str) -> Option<String> {
    let has_prefix = |p: &str| schema.quantity_names().iter().any(|n| n.starts_with(p));
    match name {
        "field_injection" if has_prefix("WIR_") => Some("sum(WIR_*)".to_string()),
        "field_production" if has_prefix("WPR_") && has_prefix("OPR_") => {
            Some("sum(WPR_*) + sum(OPR_*)".to_string())
        }
        "field_balance" if has_prefix("WIR_") && has_prefix("WPR_") && has_prefix("OPR_") => {
            Some("sum(WIR_*) - sum(WPR_*) - sum(OPR_*)".to_string())
        }
        _ => {
            let suffix = name
                .strip_prefix("total_liquid_")
                .or_else(|| name.strip_prefix("water_cut_"))?;
            let wpr = format!("WPR_{suffix}");
            let opr = format!("OPR_{suffix}");
            if schema.quantity_index(&wpr).is_none() || schema.quantity_index(&opr).is_none() {
                return None;
            }
            if name.starts_with("total_liquid_") {
                Some(format!("{wpr} + {opr}"))
            } else {
                Some(format!("{wpr} / ({wpr} + {opr})"))
            }
        }
    }
}

/// Covariance and Pearson correlation between two quantities, per time step
/// across members. Steps where either variance vanishes get a NaN
/// correlation null-marker; the covariance is always defined.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrCovSeries<S: Scalar> {
    pub times: Vec<f64>,
    pub covariance: Vec<S>,
    pub correlation: Vec<S>,
}

pub fn corr_cov_series<S: Scalar>(
    e: &Ensemble<S>,
    qty_a: usize,
    qty_b: usize,
) -> Result<CorrCovSeries<S>> {
    let nq = e.schema().n_qoi();
    if qty_a >= nq || qty_b >= nq {
        return Err(DsiError::schema(format!(
            "quantity indices ({qty_a}, {qty_b}) out of range for {nq} quantities"
        )));
    }
    let n = e.n_members();
    if n < 2 {
        return Err(DsiError::config("correlation series need at least two members"));
    }
    let nt = e.schema().n_t();
    let denom = S::of_f64((n - 1) as f64);
    let mut covariance = Vec::with_capacity(nt);
    let mut correlation = Vec::with_capacity(nt);
    for t in 0..nt {
        let mut mean_a = S::zero();
        let mut mean_b = S::zero();
        for m in e.iter_members() {
            mean_a += m[(qty_a, t)];
            mean_b += m[(qty_b, t)];
        }
        let n_s = S::of_f64(n as f64);
        mean_a /= n_s;
        mean_b /= n_s;
        let mut c_ab = S::zero();
        let mut v_a = S::zero();
        let mut v_b = S::zero();
        for m in e.iter_members() {
            let da = m[(qty_a, t)] - mean_a;
            let db = m[(qty_b, t)] - mean_b;
            c_ab += da * db;
            v_a += da * da;
            v_b += db * db;
        }
        c_ab /= denom;
        v_a /= denom;
        v_b /= denom;
        covariance.push(c_ab);
        if v_a > S::zero() && v_b > S::zero() {
            let r = c_ab / (v_a.sqrt() * v_b.sqrt());
            // Round-off can push |r| a hair past 1.
            correlation.push(r.clamp(-S::one(), S::one()));
        } else {
            correlation.push(S::of_f64(f64::NAN));
        }
    }
    Ok(CorrCovSeries { times: e.schema().times().to_vec(), covariance, correlation })
}

/// Energy-truncated SVD basis of a reference ensemble, for whitened
/// distances to its distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisBasis<S: Scalar> {
    schema: DataSchema,
    mean: DVector<S>,
    /// `n_f x k` left singular vectors.
    u: DMatrix<S>,
    /// Covariance-scaled singular values, descending.
    sigma: Vec<S>,
    energy: f64,
    achieved_energy: f64,
}

impl<S: Scalar> MahalanobisBasis<S> {
    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn mean(&self) -> &DVector<S> {
        &self.mean
    }

    pub fn u(&self) -> &DMatrix<S> {
        &self.u
    }

    pub fn sigma(&self) -> &[S] {
        &self.sigma
    }

    /// Requested energy fraction.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Energy fraction the retained block actually captures.
    pub fn achieved_energy(&self) -> f64 {
        self.achieved_energy
    }
}

/// Fits the reference basis: SVD of the centered, `1/sqrt(N-1)`-scaled
/// reference matrix, truncated at the smallest `k` whose squared singular
/// values reach `energy`.
pub fn fit_mahalanobis<S: Scalar>(reference: &Ensemble<S>, energy: f64) -> Result<MahalanobisBasis<S>> {
    let centered = centered_data_matrix(reference)?;
    let svd = centered.svd(true, false);
    let svals: Vec<S> = svd.singular_values.iter().cloned().collect();
    let k = energy_rank(&svals, energy)?;
    let u_full = svd.u.as_ref().expect("left vectors requested");
    let u = u_full.columns(0, k).into_owned();
    let total: f64 = svals.iter().map(|v| v.as_f64().powi(2)).sum();
    let kept: f64 = svals[..k].iter().map(|v| v.as_f64().powi(2)).sum();
    Ok(MahalanobisBasis {
        schema: reference.schema().clone(),
        mean: ensemble_mean(reference).flat(),
        u,
        sigma: svals[..k].to_vec(),
        energy,
        achieved_energy: kept / total,
    })
}

/// Whitened distance `||Sigma^-1 U^T (d - mean)||` of one data vector from
/// the reference distribution.
pub fn mahalanobis_distance<S: Scalar>(basis: &MahalanobisBasis<S>, d: &DataVector<S>) -> Result<S> {
    if d.schema() != &basis.schema {
        return Err(DsiError::schema("data vector schema does not match the basis"));
    }
    let centered = d.flat() - &basis.mean;
    let omega = basis.u.transpose() * centered;
    let mut acc = S::zero();
    for (j, w) in omega.iter().enumerate() {
        let z = *w / basis.sigma[j];
        acc += z * z;
    }
    Ok(acc.sqrt())
}

/// Mahalanobis distances of every member, in member order.
pub fn mahalanobis_distances<S: Scalar>(
    basis: &MahalanobisBasis<S>,
    e: &Ensemble<S>,
) -> Result<Vec<S>> {
    (0..e.n_members()).map(|i| mahalanobis_distance(basis, &e.member(i))).collect()
}

/// Sorted D_M values per named ensemble plus all pairwise two-sample KS
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DmComparison<S: Scalar> {
    pub names: Vec<String>,
    pub sorted_dm: Vec<Vec<S>>,
    /// `ks[i][j]` = two-sample KS between collections `i` and `j`.
    pub ks: Vec<Vec<f64>>,
}

pub fn dm_cdf_compare<S: Scalar>(
    basis: &MahalanobisBasis<S>,
    named: &[(&str, &Ensemble<S>)],
) -> Result<DmComparison<S>> {
    if named.len() < 2 {
        return Err(DsiError::config("D_M comparison needs at least two named ensembles"));
    }
    let mut names = Vec::with_capacity(named.len());
    let mut sorted_dm = Vec::with_capacity(named.len());
    for (name, e) in named {
        let mut dm = mahalanobis_distances(basis, e)?;
        sort_scalars(&mut dm);
        names.push(name.to_string());
        sorted_dm.push(dm);
    }
    let n = named.len();
    let mut ks = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let stat = ks_two_sample(&sorted_dm[i], &sorted_dm[j])?;
            ks[i][j] = stat;
            ks[j][i] = stat;
        }
    }
    Ok(DmComparison { names, sorted_dm, ks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, DsiRng};
    use crate::synth::{tank_ensemble, TankPriorConfig};

    fn schema(names: &[&str], nt: usize) -> DataSchema {
        DataSchema::new(
            names.iter().map(|s| s.to_string()).collect(),
            (1..=nt).map(|t| t as f64).collect(),
        )
        .unwrap()
    }

    fn one_qty(values: &[f64]) -> Ensemble<f64> {
        let members = values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
        Ensemble::new(schema(&["q"], 1), members).unwrap()
    }

    #[test]
    fn quantile_interpolation_matches_hand_values() {
        let e = one_qty(&[0.0, 10.0]);
        let b = quantile_bands(&e, &[0.5]).unwrap();
        assert!((b.band(0)[(0, 0)] - 5.0).abs() < 1e-12);

        let e = one_qty(&(1..=100).map(f64::from).collect::<Vec<_>>());
        let b = quantile_bands(&e, &[0.1]).unwrap();
        assert!((b.band(0)[(0, 0)] - 10.9).abs() < 1e-12);

        let e = one_qty(&[7.0, 7.0, 7.0]);
        let b = quantile_bands(&e, &[0.1, 0.5, 0.9]).unwrap();
        for k in 0..3 {
            assert_eq!(b.band(k)[(0, 0)], 7.0);
        }
    }

    #[test]
    fn quantile_bands_are_monotone_in_probability() {
        let mut r = DsiRng::from_seed(8);
        let sch = schema(&["a", "b"], 4);
        let members = (0..40)
            .map(|_| DMatrix::from_fn(2, 4, |_, _| rng::normal::<f64>(&mut r, 0.0, 3.0)))
            .collect();
        let e = Ensemble::new(sch, members).unwrap();
        let probs = [0.1, 0.25, 0.5, 0.75, 0.9];
        let b = quantile_bands(&e, &probs).unwrap();
        for k in 1..probs.len() {
            for q in 0..2 {
                for t in 0..4 {
                    assert!(b.band(k)[(q, t)] >= b.band(k - 1)[(q, t)]);
                }
            }
        }
        assert!(quantile_bands(&e, &[0.0]).is_err());
        assert!(quantile_bands(&e, &[]).is_err());
    }

    #[test]
    fn parser_handles_precedence_parens_and_unary_minus() {
        let sch = schema(&["x", "y"], 1);
        let m = DMatrix::from_row_slice(2, 1, &[6.0, 3.0]);
        let e = Ensemble::new(sch, vec![m]).unwrap();
        let check = |expr: &str, want: f64| {
            let d = derived_quantity(&e, "out", expr, DivisionPolicy::NullMarker).unwrap();
            let got = d.member_values(0)[(0, 0)];
            assert!((got - want).abs() < 1e-12, "{expr} gave {got}, want {want}");
        };
        check("x + y * 2", 12.0);
        check("(x + y) * 2", 18.0);
        check("x / y + 1", 3.0);
        check("-x + y", -3.0);
        check("x - -y", 9.0);
        check("2.5e1 - x", 19.0);
        check("x * -y", -18.0);
    }

    #[test]
    fn division_policies_guard_small_divisors() {
        let sch = schema(&["x", "y"], 1);
        let m = DMatrix::<f64>::from_row_slice(2, 1, &[6.0, 0.0]);
        let e = Ensemble::new(sch, vec![m]).unwrap();
        let marked = derived_quantity(&e, "r", "x / y", DivisionPolicy::NullMarker).unwrap();
        assert!(marked.member_values(0)[(0, 0)].is_nan());
        let clamped = derived_quantity(&e, "r", "x / y", DivisionPolicy::Clamp).unwrap();
        assert!((clamped.member_values(0)[(0, 0)] - 6.0 / DIVISION_GUARD).abs() < 1.0);
        let neg = DMatrix::from_row_slice(2, 1, &[6.0, -1e-15]);
        let e = Ensemble::new(schema(&["x", "y"], 1), vec![neg]).unwrap();
        let clamped = derived_quantity(&e, "r", "x / y", DivisionPolicy::Clamp).unwrap();
        assert!(clamped.member_values(0)[(0, 0)] < 0.0, "sign must survive the clamp");
    }

    #[test]
    fn unknown_names_and_bad_syntax_error_out() {
        let e = one_qty(&[1.0]);
        for expr in ["nope", "q +", "sum(Z*)", "q ) ", "sum(q)", "1..2"] {
            assert!(
                derived_quantity(&e, "out", expr, DivisionPolicy::NullMarker).is_err(),
                "{expr} should fail"
            );
        }
    }

    #[test]
    fn tank_members_conserve_field_balance() {
        let cfg = TankPriorConfig::default_2d();
        let times: Vec<f64> = (1..=10).map(|k| 200.0 * k as f64).collect();
        let e: Ensemble<f64> = tank_ensemble(&cfg, &times, 25, &DsiRng::from_seed(5)).unwrap();
        let expr = builtin_expr(e.schema(), "field_balance").unwrap();
        let bal = derived_quantity(&e, "balance", &expr, DivisionPolicy::NullMarker).unwrap();
        let inj = derived_quantity(
            &e,
            "inj",
            &builtin_expr(e.schema(), "field_injection").unwrap(),
            DivisionPolicy::NullMarker,
        )
        .unwrap();
        for i in 0..e.n_members() {
            for t in 0..10 {
                let scale = inj.member_values(i)[(0, t)];
                assert!(bal.member_values(i)[(0, t)].abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn water_cut_of_equal_rates_is_half() {
        let sch = schema(&["WPR_P1", "OPR_P1"], 2);
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[4.0, 8.0, 4.0, 8.0]);
        let e = Ensemble::new(sch, vec![m]).unwrap();
        let expr = builtin_expr(e.schema(), "water_cut_P1").unwrap();
        let wc = derived_quantity(&e, "wc", &expr, DivisionPolicy::NullMarker).unwrap();
        for t in 0..2 {
            assert!((wc.member_values(0)[(0, t)] - 0.5).abs() < 1e-12);
        }
        let tl = derived_quantity(
            &e,
            "tl",
            &builtin_expr(e.schema(), "total_liquid_P1").unwrap(),
            DivisionPolicy::NullMarker,
        )
        .unwrap();
        assert!((tl.member_values(0)[(0, 1)] - 16.0).abs() < 1e-12);
        assert!(builtin_expr(e.schema(), "water_cut_P9").is_none());
        assert!(builtin_expr(e.schema(), "field_injection").is_none());
    }

    #[test]
    fn correlation_trivial_cases() {
        let sch = schema(&["a", "b", "c"], 2);
        let mut r = DsiRng::from_seed(12);
        let members: Vec<DMatrix<f64>> = (0..30)
            .map(|_| {
                let x0 = rng::normal::<f64>(&mut r, 1.0, 2.0);
                let x1 = rng::normal::<f64>(&mut r, 1.0, 2.0);
                DMatrix::from_row_slice(3, 2, &[x0, x1, -x0, -x1, 5.0, 5.0])
            })
            .collect();
        let e = Ensemble::new(sch, members).unwrap();
        let self_corr = corr_cov_series(&e, 0, 0).unwrap();
        let anti = corr_cov_series(&e, 0, 1).unwrap();
        let flat = corr_cov_series(&e, 0, 2).unwrap();
        for t in 0..2 {
            assert!((self_corr.correlation[t] - 1.0).abs() < 1e-12);
            assert!((anti.correlation[t] + 1.0).abs() < 1e-12);
            assert!(flat.correlation[t].is_nan(), "zero variance must yield a null marker");
            assert!(flat.covariance[t].abs() < 1e-12);
        }
        assert!(corr_cov_series(&e, 0, 9).is_err());
    }

    #[test]
    fn mahalanobis_trivial_distances() {
        let cfg = TankPriorConfig::default_2d();
        let times: Vec<f64> = (1..=6).map(|k| 400.0 * k as f64).collect();
        let e: Ensemble<f64> = tank_ensemble(&cfg, &times, 60, &DsiRng::from_seed(21)).unwrap();
        let basis = fit_mahalanobis(&e, 0.99).unwrap();
        assert!(basis.k() >= 1);
        assert!(basis.achieved_energy() >= 0.99);

        let center = DataVector::from_flat(e.schema().clone(), basis.mean()).unwrap();
        assert!(mahalanobis_distance(&basis, &center).unwrap() < 1e-10);

        let shifted = basis.mean() + basis.u().column(0) * basis.sigma()[0];
        let d = DataVector::from_flat(e.schema().clone(), &shifted).unwrap();
        assert!((mahalanobis_distance(&basis, &d).unwrap() - 1.0).abs() < 1e-8);

        // In-sample mean squared distance tracks the retained dimension.
        let dm = mahalanobis_distances(&basis, &e).unwrap();
        let mean_sq: f64 = dm.iter().map(|v| v * v).sum::<f64>() / dm.len() as f64;
        let k = basis.k() as f64;
        assert!(
            (mean_sq - k).abs() <= 0.2 * k,
            "mean D_M^2 = {mean_sq:.3}, retained k = {k}"
        );
    }

    #[test]
    fn rank_one_reference_retains_a_single_mode() {
        let sch = schema(&["q"], 3);
        let base = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let members: Vec<DMatrix<f64>> =
            (0..10).map(|i| base.clone() * (1.0 + 0.1 * i as f64)).collect();
        let e = Ensemble::new(sch, members).unwrap();
        let basis = fit_mahalanobis(&e, 0.99).unwrap();
        assert_eq!(basis.k(), 1);
    }

    #[test]
    fn degenerate_reference_errors_out() {
        let e = Ensemble::new(
            schema(&["q"], 2),
            vec![DMatrix::from_element(1, 2, 3.0); 4],
        )
        .unwrap();
        assert!(fit_mahalanobis(&e, 0.99).is_err());
    }

    #[test]
    fn distance_depends_only_on_deviation_through_the_basis() {
        // Rotating reference and query by one orthogonal map preserves D_M.
        let cfg = TankPriorConfig::default_2d();
        let times: Vec<f64> = (1..=4).map(|k| 500.0 * k as f64).collect();
        let e: Ensemble<f64> = tank_ensemble(&cfg, &times, 40, &DsiRng::from_seed(33)).unwrap();
        let n_f = e.schema().n_f();

        let mut r = DsiRng::from_seed(34);
        let gauss = DMatrix::from_fn(n_f, n_f, |_, _| rng::standard_normal::<f64>(&mut r));
        let q = gauss.qr().q();

        let flat = e.flat_matrix();
        let rotated = Ensemble::from_flat_matrix(e.schema().clone(), &(&q * &flat)).unwrap();

        let basis = fit_mahalanobis(&e, 0.999).unwrap();
        let basis_rot = fit_mahalanobis(&rotated, 0.999).unwrap();
        for i in 0..5 {
            let d = e.member(i);
            let d_rot = rotated.member(i);
            let a = mahalanobis_distance(&basis, &d).unwrap();
            let b = mahalanobis_distance(&basis_rot, &d_rot).unwrap();
            assert!((a - b).abs() < 1e-6, "member {i}: {a} vs {b}");
        }
    }

    #[test]
    fn dm_comparison_reports_zero_against_self_and_orders_pairs() {
        let cfg = TankPriorConfig::default_2d();
        let times: Vec<f64> = (1..=5).map(|k| 400.0 * k as f64).collect();
        let reference: Ensemble<f64> =
            tank_ensemble(&cfg, &times, 50, &DsiRng::from_seed(41)).unwrap();
        let other: Ensemble<f64> =
            tank_ensemble(&cfg, &times, 50, &DsiRng::from_seed(42)).unwrap();
        let basis = fit_mahalanobis(&reference, 0.99).unwrap();
        let cmp = dm_cdf_compare(&basis, &[("ref", &reference), ("same", &reference), ("other", &other)])
            .unwrap();
        assert_eq!(cmp.ks[0][1], 0.0);
        assert_eq!(cmp.ks[0][0], 0.0);
        assert!(cmp.ks[0][2] > 0.0);
        assert_eq!(cmp.ks[0][2], cmp.ks[2][0]);
        for dm in &cmp.sorted_dm {
            assert!(dm.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(dm_cdf_compare(&basis, &[("only", &reference)]).is_err());
    }
}

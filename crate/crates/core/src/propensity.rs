//! Probit propensity scores, common-support filtering and balance tests.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matching::MatchWeights;
use crate::panel::{log_change, FirmId, Panel, Variable};
use crate::stats;

/// Scores are kept this far from 0 and 1.
pub const SCORE_CLAMP: f64 = 1e-12;
pub const PROBIT_TOLERANCE: f64 = 1e-8;
pub const PROBIT_MAX_ITER: usize = 100;
/// A fitted index beyond this magnitude for any unit means the likelihood
/// has no interior maximum (Phi saturates long before). Bounding the index
/// rather than the coefficients keeps the rule independent of covariate
/// scale.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Newton stops on the gradient tolerance once a separated coefficient
/// reaches about 6, well short of the bound above, but its standard error
/// is then thousands of times its size. A standard error beyond this
/// multiple of `1 + |b|` is reported as separation.
pub const SEPARATION_SE_RATIO: f64 = 100.0;

pub const INTERCEPT: &str = "(intercept)";

/// One firm-level covariate, averaged over the chosen pre-treatment years.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Covariate {
    Level(Variable),
    Log(Variable),
    /// Indicator per industry code, omitting the lowest code.
    Industry,
}

impl FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "industry" {
            return Ok(Covariate::Industry);
        }
        match s.strip_prefix("ln_") {
            Some(rest) => Ok(Covariate::Log(rest.parse()?)),
            None => Ok(Covariate::Level(s.parse()?)),
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariate::Level(v) => write!(f, "{v}"),
            Covariate::Log(v) => write!(f, "ln_{v}"),
            Covariate::Industry => f.write_str("industry"),
        }
    }
}

/// Default propensity covariates: log employees, log output, log energy
/// use, export share and industry indicators.
pub fn default_covariates() -> Vec<Covariate> {
    ["ln_employees", "ln_output", "ln_energy", "export_share", "industry"]
        .iter()
        .map(|s| s.parse().expect("valid covariate name"))
        .collect()
}

/// Unit-by-covariate matrix. The intercept is not stored; [`design`]
/// prepends it when the flag is set.
///
/// [`design`]: CovariateSet::design
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSet {
    names: Vec<String>,
    values: DMatrix<f64>,
    unit_ids: Vec<FirmId>,
    intercept: bool,
}

impl CovariateSet {
    pub fn new(names: Vec<String>, values: DMatrix<f64>, unit_ids: Vec<FirmId>, intercept: bool) -> Result<Self> {
        if values.ncols() != names.len() {
            return Err(Error::InvalidArgument(format!(
                "{} covariate names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        if values.nrows() != unit_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} unit ids for {} rows",
                unit_ids.len(),
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates must be finite".into()));
        }
        if intercept && values.nrows() > 0 {
            for (j, col) in values.column_iter().enumerate() {
                if col.iter().all(|v| *v == col[0]) {
                    return Err(Error::Collinear(format!(
                        "covariate `{}` is constant alongside the intercept",
                        names[j]
                    )));
                }
            }
        }
        Ok(CovariateSet {
            names,
            values,
            unit_ids,
            intercept,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn unit_ids(&self) -> &[FirmId] {
        &self.unit_ids
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    /// Coefficient labels, intercept first when present.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.names.len() + 1);
        if self.intercept {
            out.push(INTERCEPT.to_string());
        }
        out.extend(self.names.iter().cloned());
        out
    }

    pub fn design(&self) -> DMatrix<f64> {
        if !self.intercept {
            return self.values.clone();
        }
        self.values.clone().insert_column(0, 1.0)
    }

    /// Rows for the listed units, in that order.
    pub fn select(&self, ids: &[FirmId]) -> Result<CovariateSet> {
        let index: BTreeMap<&str, usize> = self
            .unit_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("no covariates for firm `{id}`")))
            })
            .collect::<Result<_>>()?;
        let values = self.values.select_rows(&rows);
        Ok(CovariateSet {
            names: self.names.clone(),
            values,
            unit_ids: ids.to_vec(),
            intercept: self.intercept,
        })
    }
}

/// Firm-level covariates built from a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateData {
    pub set: CovariateSet,
    /// Treatment flag per row of `set`.
    pub treated: Vec<bool>,
    /// Firms with no usable value for some covariate in any of the years.
    pub excluded: Vec<FirmId>,
}

/// Builds one row per firm: each covariate is the mean over `years` in
/// which the firm has a usable value (logs need positive values).
pub fn build_covariates(
    panel: &Panel,
    covariates: &[Covariate],
    years: &[i32],
    intercept: bool,
) -> Result<CovariateData> {
    let industries = panel.industries();
    let mut names = Vec::new();
    for c in covariates {
        match c {
            Covariate::Industry => names.extend(industries.iter().skip(1).map(|code| format!("industry_{code}"))),
            other => names.push(other.to_string()),
        }
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut ids = Vec::new();
    let mut treated = Vec::new();
    let mut excluded = Vec::new();
    'firm: for firm in panel.firms() {
        let mut row = Vec::with_capacity(names.len());
        for c in covariates {
            match c {
                Covariate::Industry => {
                    row.extend(industries.iter().skip(1).map(|code| f64::from(firm.industry == *code)))
                }
                Covariate::Level(v) | Covariate::Log(v) => {
                    let log = matches!(c, Covariate::Log(_));
                    let vals: Vec<f64> = years
                        .iter()
                        .filter_map(|&y| panel.value(&firm.firm_id, y, v))
                        .filter(|x| !log || *x > 0.0)
                        .map(|x| if log { x.ln() } else { x })
                        .collect();
                    if vals.is_empty() {
                        excluded.push(firm.firm_id);
                        continue 'firm;
                    }
                    row.push(stats::mean(&vals));
                }
            }
        }
        rows.extend(row);
        ids.push(firm.firm_id);
        treated.push(firm.ets);
    }
    let values = DMatrix::from_row_slice(ids.len(), names.len(), &rows);
    Ok(CovariateData {
        set: CovariateSet::new(names, values, ids, intercept)?,
        treated,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitModel {
    /// Labels aligned with `coefficients`, intercept first when present.
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    /// Inverse of the negative observed Hessian at the estimate.
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub intercept: bool,
}

impl ProbitModel {
    pub fn standard_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

fn check_binary(design: &DMatrix<f64>, d: &[bool]) -> Result<()> {
    if design.nrows() != d.len() {
        return Err(Error::InvalidArgument(format!(
            "{} design rows for {} outcomes",
            design.nrows(),
            d.len()
        )));
    }
    if d.iter().all(|x| *x) || d.iter().all(|x| !*x) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Probit log-likelihood `sum ln Phi(q_i x_i'b)`, `q = 2d - 1`.
pub fn probit_loglik(design: &DMatrix<f64>, d: &[bool], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(d)
        .map(|(e, &di)| stats::norm_ln_cdf(if di { *e } else { -*e }))
        .sum()
}

/// Generalized residuals `lambda_i = q m(q eta)` with `m` the inverse Mills
/// ratio; the score is `X' lambda`.
fn generalized_residuals(eta: &DVector<f64>, d: &[bool]) -> DVector<f64> {
    DVector::from_iterator(
        eta.len(),
        eta.iter()
            .zip(d)
            .map(|(e, &di)| if di { stats::mills(*e) } else { -stats::mills(-*e) }),
    )
}

/// Analytic gradient of [`probit_loglik`].
pub fn probit_score(design: &DMatrix<f64>, d: &[bool], beta: &DVector<f64>) -> DVector<f64> {
    let eta = design * beta;
    design.tr_mul(&generalized_residuals(&eta, d))
}

/// Observed Hessian `-sum lambda (lambda + eta) x x'`.
pub fn probit_hessian(design: &DMatrix<f64>, d: &[bool], beta: &DVector<f64>) -> DMatrix<f64> {
    let eta = design * beta;
    let mut scaled = design.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        // lambda (lambda + eta) = m(qe) (qe + m(qe)), evaluated without cancellation
        let qe = if d[i] { eta[i] } else { -eta[i] };
        row *= (stats::mills(qe) * stats::z_plus_mills(qe)).sqrt();
    }
    -scaled.tr_mul(&scaled)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Probit maximum likelihood by Newton's method with step halving.
///
/// Starts from the intercept-only solution `Phi^-1(mean D)` (all zeros
/// without an intercept). Stops when the largest absolute score component
/// is at most 1e-8, or after 100 iterations with `converged = false`.
pub fn fit_probit(x: &CovariateSet, d: &[bool]) -> Result<ProbitModel> {
    let design = x.design();
    check_binary(&design, d)?;
    let names = x.column_names();
    let p = design.ncols();
    let mut beta = DVector::zeros(p);
    if x.has_intercept() {
        let share = d.iter().filter(|v| **v).count() as f64 / d.len() as f64;
        beta[0] = stats::norm_quantile(share);
    }
    let mut ll = probit_loglik(&design, d, &beta);
    let mut grad = probit_score(&design, d, &beta);
    let mut iterations = 0;
    while max_abs(&grad) > PROBIT_TOLERANCE && iterations < PROBIT_MAX_ITER {
        iterations += 1;
        let neg_hess = -probit_hessian(&design, d, &beta);
        let step = neg_hess
            .cholesky()
            .ok_or_else(|| Error::Collinear("probit information matrix is singular".into()))?
            .solve(&grad);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &beta + &step * scale;
            let cand_ll = probit_loglik(&design, d, &candidate);
            if cand_ll >= ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            // no ascent direction left at machine precision
            break;
        };
        beta = next;
        ll = next_ll;
        if let Some(eta) = (&design * &beta).iter().find(|e| e.abs() > SEPARATION_BOUND) {
            return Err(Error::PerfectSeparation {
                name: "fitted index".into(),
                value: *eta,
            });
        }
        grad = probit_score(&design, d, &beta);
    }
    let converged = max_abs(&grad) <= PROBIT_TOLERANCE;
    let covariance = (-probit_hessian(&design, d, &beta))
        .try_inverse()
        .ok_or_else(|| Error::Collinear("probit information matrix is singular".into()))?;
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    for (j, b) in beta.iter().enumerate() {
        if covariance[(j, j)].sqrt() > SEPARATION_SE_RATIO * (1.0 + b.abs()) {
            return Err(Error::PerfectSeparation {
                name: names[j].clone(),
                value: *b,
            });
        }
    }
    Ok(ProbitModel {
        names,
        coefficients: beta,
        covariance,
        log_likelihood: ll,
        iterations,
        converged,
        intercept: x.has_intercept(),
    })
}

/// `Phi(x'b)` clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_scores(model: &ProbitModel, x: &CovariateSet) -> Result<Vec<f64>> {
    let names = x.column_names();
    if names != model.names {
        return Err(Error::ColumnMismatch {
            expected: model.names.clone(),
            found: names,
        });
    }
    let eta = x.design() * &model.coefficients;
    Ok(eta
        .iter()
        .map(|e| stats::norm_cdf(*e).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportReport {
    /// Ascending indices of retained units (all controls, overlapping treated).
    pub retained: Vec<usize>,
    /// Treated units outside the control score range.
    pub dropped_treated: Vec<usize>,
    pub warning: Option<String>,
}

/// Drops treated units whose score lies outside `[min, max]` of the control
/// scores. Controls are always kept.
pub fn common_support_filter(scores: &[f64], treated: &[bool]) -> SupportReport {
    let controls = scores.iter().zip(treated).filter(|(_, t)| !**t).map(|(s, _)| *s);
    let (lo, hi) = controls.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (i, (&s, &t)) in scores.iter().zip(treated).enumerate() {
        if !t || (s >= lo && s <= hi) {
            retained.push(i);
        } else {
            dropped.push(i);
        }
    }
    let n_treated = treated.iter().filter(|t| **t).count();
    let warning = if n_treated > 0 && dropped.len() == n_treated {
        Some("no treated unit lies within the control score range".to_string())
    } else if !dropped.is_empty() {
        Some(format!(
            "{} of {} treated units outside common support",
            dropped.len(),
            n_treated
        ))
    } else {
        None
    };
    SupportReport {
        retained,
        dropped_treated: dropped,
        warning,
    }
}

/// One balance test between matched treated units and their weighted
/// controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n_treated: usize,
    pub n_controls: usize,
}

/// Welch test of treated values against control values weighted by their
/// total matching weight `sum_i W(i,k)`. Units without a value are left out;
/// the remaining control weights are renormalized.
fn matched_welch(weights: &MatchWeights, values: &BTreeMap<FirmId, f64>) -> Result<BalanceTest> {
    let treated: Vec<f64> = weights
        .treated()
        .iter()
        .filter_map(|id| values.get(id).copied())
        .collect();
    let mut control_vals = Vec::new();
    let mut control_w = Vec::new();
    for (id, w) in weights.controls().iter().zip(weights.control_weights()) {
        if w > 0.0 {
            if let Some(v) = values.get(id) {
                control_vals.push(*v);
                control_w.push(w);
            }
        }
    }
    let test = stats::welch_weighted(&treated, &vec![1.0; treated.len()], &control_vals, &control_w)?;
    Ok(BalanceTest {
        statistic: test.statistic,
        p_value: test.p_value,
        n_treated: treated.len(),
        n_controls: control_vals.len(),
    })
}

/// Equality of pre-treatment levels of `var` in `pre_year`.
pub fn balance_levels_test(
    panel: &Panel,
    weights: &MatchWeights,
    var: &Variable,
    pre_year: i32,
) -> Result<BalanceTest> {
    let values: BTreeMap<FirmId, f64> = panel
        .records()
        .iter()
        .filter(|r| r.year == pre_year)
        .filter_map(|r| r.value(var).map(|v| (r.firm_id.clone(), v)))
        .collect();
    matched_welch(weights, &values)
}

/// Equality of pre-treatment trends: the same test on per-firm log changes
/// from `from_year` to `to_year`.
pub fn balance_trends_test(
    panel: &Panel,
    weights: &MatchWeights,
    var: &Variable,
    from_year: i32,
    to_year: i32,
) -> Result<BalanceTest> {
    let changes = log_change(panel, var, from_year, to_year)?;
    matched_welch(weights, &changes.changes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub variable: String,
    pub levels: BalanceTest,
    pub trends: BalanceTest,
}

/// Levels and trends tests for several variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
}

impl BalanceReport {
    /// Levels in `base_year`, trends from the first to the last
    /// pretreatment year.
    pub fn compute(panel: &Panel, weights: &MatchWeights, variables: &[Variable]) -> Result<BalanceReport> {
        let w = panel.windows();
        let (Some(&from), Some(&to)) = (w.pretreatment_years.iter().min(), w.pretreatment_years.iter().max()) else {
            return Err(Error::InvalidArgument("no pretreatment years".into()));
        };
        let mut rows = Vec::new();
        for var in variables {
            rows.push(BalanceRow {
                variable: var.to_string(),
                levels: balance_levels_test(panel, weights, var, w.base_year)?,
                trends: balance_trends_test(panel, weights, var, from, to)?,
            });
        }
        Ok(BalanceReport { rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "variable", "p_level", "n_treat", "n_ctrl", "p_trend", "n_treat", "n_ctrl"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>9.3} {:>9} {:>9} {:>9.3} {:>9} {:>9}\n",
                r.variable,
                r.levels.p_value,
                r.levels.n_treated,
                r.levels.n_controls,
                r.trends.p_value,
                r.trends.n_treated,
                r.trends.n_controls
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variable,p_level,n_treated_level,n_controls_level,p_trend,n_treated_trend,n_controls_trend\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variable,
                r.levels.p_value,
                r.levels.n_treated,
                r.levels.n_controls,
                r.trends.p_value,
                r.trends.n_treated,
                r.trends.n_controls
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(cols: &[&[f64]], intercept: bool) -> CovariateSet {
        set_n(cols.first().map_or(0, |c| c.len()), cols, intercept)
    }

    fn set_n(n: usize, cols: &[&[f64]], intercept: bool) -> CovariateSet {
        let values = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
        let ids = (0..n).map(|i| format!("f{i:03}")).collect();
        CovariateSet::new(names, values, ids, intercept).unwrap()
    }

    #[test]
    fn single_class_rejected() {
        let x = set(&[&[0.1, 0.2, 0.3]], true);
        assert!(matches!(fit_probit(&x, &[true; 3]), Err(Error::SingleClass)));
    }

    #[test]
    fn intercept_only_closed_form() {
        let x = set_n(4, &[], true);
        let m = fit_probit(&x, &[true, false, true, false]).unwrap();
        assert!(m.coefficients[0].abs() < 1e-12);
        let m = fit_probit(&x, &[true, false, false, false]).unwrap();
        assert!((m.coefficients[0] - stats::norm_quantile(0.25)).abs() < 1e-10);
    }

    #[test]
    fn separated_data_is_detected() {
        let x = set(&[&[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]], true);
        let err = fit_probit(&x, &[false, false, false, true, true, true]).unwrap_err();
        assert!(matches!(err, Error::PerfectSeparation { .. }));
    }

    #[test]
    fn constant_column_is_collinear() {
        let values = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let err = CovariateSet::new(vec!["c".into()], values, ids, true).unwrap_err();
        assert!(matches!(err, Error::Collinear(_)));
    }

    #[test]
    fn scores_for_zero_and_extreme_coefficients() {
        let x = set(&[&[1.0, -2.0, 50.0]], false);
        let mut model = ProbitModel {
            names: vec!["x0".into()],
            coefficients: DVector::from_element(1, 0.0),
            covariance: DMatrix::zeros(1, 1),
            log_likelihood: 0.0,
            iterations: 0,
            converged: true,
            intercept: false,
        };
        assert_eq!(predict_scores(&model, &x).unwrap(), vec![0.5; 3]);
        model.coefficients[0] = 1.0;
        let s = predict_scores(&model, &x).unwrap();
        assert!((s[0] - 0.841_345).abs() < 1e-6);
        assert_eq!(s[2], 1.0 - SCORE_CLAMP);
        let other = set(&[&[1.0], &[2.0]], false);
        assert!(matches!(
            predict_scores(&model, &other),
            Err(Error::ColumnMismatch { .. })
        ));
    }

    #[test]
    fn support_examples() {
        let scores = [0.2, 0.5, 0.9, 0.1, 0.6];
        let treated = [true, true, true, false, false];
        let r = common_support_filter(&scores, &treated);
        assert_eq!(r.retained, vec![0, 1, 3, 4]);
        assert_eq!(r.dropped_treated, vec![2]);

        let r = common_support_filter(&[0.8, 0.9, 0.1, 0.2], &[true, true, false, false]);
        assert_eq!(r.retained, vec![2, 3]);
        assert!(r.warning.is_some());
    }

    #[test]
    fn covariate_names_round_trip() {
        for name in ["ln_employees", "export_share", "industry", "ln_distance"] {
            assert_eq!(name.parse::<Covariate>().unwrap().to_string(), name);
        }
    }
}

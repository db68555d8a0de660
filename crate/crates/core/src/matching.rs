//! Nearest-neighbour propensity matching, the matched difference-in-
//! differences ATT, and the propensity-reweighted OLS variant.
//!
//! Outcomes enter in logs. A unit's change over a multi-year period is the
//! mean log outcome over its observed period years minus its base-year log
//! outcome (see [`crate::panel::window_change`]).

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::panel::{window_change, FirmId, Panel, Period, Scale, Variable};
use crate::propensity::CovariateSet;
use crate::seed::{rng_for, streams};
use crate::stats;

/// Row sums of a weight matrix must be within this of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A firm with its propensity score and treatment status.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUnit {
    pub firm_id: FirmId,
    pub score: f64,
    pub treated: bool,
}

/// How nearest-neighbour weights were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDesign {
    pub k: usize,
    pub with_replacement: bool,
}

/// Counterfactual weights `W(i, k)` of each treated unit over the controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchWeights {
    treated: Vec<FirmId>,
    controls: Vec<FirmId>,
    rows: Vec<Vec<(usize, f64)>>,
    unmatched: Vec<FirmId>,
    design: Option<MatchDesign>,
}

impl MatchWeights {
    /// Weights from explicit rows of `(control index, weight)`; each row must
    /// be nonnegative and sum to one.
    pub fn new(treated: Vec<FirmId>, controls: Vec<FirmId>, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != treated.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weight rows for {} treated units",
                rows.len(),
                treated.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|(k, w)| *k >= controls.len() || !(*w >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "invalid weight entry for treated `{}`",
                    treated[i]
                )));
            }
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "weights of treated `{}` sum to {sum}",
                    treated[i]
                )));
            }
        }
        Ok(MatchWeights {
            treated,
            controls,
            rows,
            unmatched: Vec::new(),
            design: None,
        })
    }

    pub fn treated(&self) -> &[FirmId] {
        &self.treated
    }

    pub fn controls(&self) -> &[FirmId] {
        &self.controls
    }

    /// `(control index, weight)` pairs of treated unit `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Treated units left without a match (matching without replacement
    /// after the pool ran out).
    pub fn unmatched(&self) -> &[FirmId] {
        &self.unmatched
    }

    pub fn design(&self) -> Option<&MatchDesign> {
        self.design.as_ref()
    }

    /// `sum_i W(i, k) / N1` for every control `k`.
    pub fn control_weights(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.controls.len()];
        for row in &self.rows {
            for (k, w) in row {
                total[*k] += w;
            }
        }
        let n1 = self.treated.len().max(1) as f64;
        total.iter().map(|t| t / n1).collect()
    }

    /// Long-format CSV: treated_id, control_id, weight.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("treated_id,control_id,weight\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (k, w) in row {
                out.push_str(&format!("{},{},{}\n", self.treated[i], self.controls[*k], w));
            }
        }
        out
    }
}

/// Candidate control in a score-sorted pool: `(score, tie key)`.
type PoolEntry = (f64, u64);

/// Indices into `pool` of the `k` entries closest to `s`, ordered by
/// `(distance, tie key)`. `pool` must be sorted by `(score, tie key)`.
/// Entries flagged in `used` are skipped.
fn nearest(pool: &[PoolEntry], s: f64, k: usize, used: Option<&[bool]>) -> Vec<usize> {
    let free = |i: usize| used.is_none_or(|u| !u[i]);
    let p = pool.partition_point(|e| e.0 < s);
    let mut cands: Vec<(f64, u64, usize)> = Vec::with_capacity(2 * k + 2);
    // Up to k per side, plus anything tied in distance with the k-th.
    let mut last = f64::NAN;
    let mut taken = 0;
    for i in (0..p).rev().filter(|&i| free(i)) {
        let d = s - pool[i].0;
        if taken >= k && d != last {
            break;
        }
        cands.push((d, pool[i].1, i));
        last = d;
        taken += 1;
    }
    taken = 0;
    for i in (p..pool.len()).filter(|&i| free(i)) {
        let d = pool[i].0 - s;
        if taken >= k && d != last {
            break;
        }
        cands.push((d, pool[i].1, i));
        last = d;
        taken += 1;
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands.truncate(k);
    cands.into_iter().map(|c| c.2).collect()
}

fn sorted_pool(scores: &[f64], keys: impl Iterator<Item = u64>) -> (Vec<PoolEntry>, Vec<usize>) {
    let mut order: Vec<(f64, u64, usize)> = scores
        .iter()
        .zip(keys)
        .enumerate()
        .map(|(i, (s, key))| (*s, key, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let pool = order.iter().map(|e| (e.0, e.1)).collect();
    let back = order.iter().map(|e| e.2).collect();
    (pool, back)
}

/// Matches each treated unit (in `treated_order`) against the pool. Returns
/// for each treated unit the pool positions of its matches.
fn match_pool(
    pool: &[PoolEntry],
    treated_scores: &[f64],
    treated_order: &[usize],
    k: usize,
    with_replacement: bool,
) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); treated_scores.len()];
    let mut used = vec![false; if with_replacement { 0 } else { pool.len() }];
    for &t in treated_order {
        let hits = if with_replacement {
            nearest(pool, treated_scores[t], k, None)
        } else {
            let hits = nearest(pool, treated_scores[t], k, Some(&used));
            for &h in &hits {
                used[h] = true;
            }
            hits
        };
        out[t] = hits;
    }
    out
}

/// Nearest-neighbour matching on the propensity score.
///
/// Each treated unit gets its `k` closest controls by absolute score
/// difference, each weighted `1/k'` with `k' = min(k, controls available)`.
/// Distance ties go to the smaller firm id. Without replacement, treated
/// units are served in ascending firm id and a used control leaves the pool;
/// treated units finding the pool empty are reported as unmatched.
pub fn nn_match(units: &[ScoredUnit], k: usize, with_replacement: bool) -> Result<MatchWeights> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut treated: Vec<&ScoredUnit> = units.iter().filter(|u| u.treated).collect();
    let mut controls: Vec<&ScoredUnit> = units.iter().filter(|u| !u.treated).collect();
    if controls.is_empty() {
        return Err(Error::NoControls);
    }
    if treated.is_empty() {
        return Err(Error::EmptyTreated);
    }
    if units.iter().any(|u| !u.score.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    treated.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    controls.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    let control_scores: Vec<f64> = controls.iter().map(|c| c.score).collect();
    let treated_scores: Vec<f64> = treated.iter().map(|t| t.score).collect();
    let (pool, back) = sorted_pool(&control_scores, 0..controls.len() as u64);
    let order: Vec<usize> = (0..treated.len()).collect();
    let hits = match_pool(&pool, &treated_scores, &order, k, with_replacement);

    let mut kept = Vec::new();
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for (t, h) in hits.into_iter().enumerate() {
        if h.is_empty() {
            unmatched.push(treated[t].firm_id.clone());
            continue;
        }
        let w = 1.0 / h.len() as f64;
        rows.push(h.into_iter().map(|p| (back[p], w)).collect());
        kept.push(treated[t].firm_id.clone());
    }
    Ok(MatchWeights {
        treated: kept,
        controls: controls.iter().map(|c| c.firm_id.clone()).collect(),
        rows,
        unmatched,
        design: Some(MatchDesign { k, with_replacement }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    NearestNeighbor { k: usize },
    ReweightedOls,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::NearestNeighbor { k } => write!(f, "NN(1:{k})"),
            Estimator::ReweightedOls => f.write_str("OLS w/R"),
        }
    }
}

/// One treatment-effect estimate in log points.
#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimate {
    pub outcome: String,
    pub period: Period,
    pub estimator: Estimator,
    pub estimate: f64,
    /// `None` when no standard error was requested (zero bootstrap draws).
    pub se: Option<f64>,
    pub p_value: Option<f64>,
    pub n_treated: usize,
    /// Controls with outcome data available to the estimator.
    pub n_controls: usize,
    /// Treated units dropped for missing outcome data or matches.
    pub dropped_treated: Vec<FirmId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapOptions {
    pub reps: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { reps: 499, seed: 0 }
    }
}

/// Normal-approximation p-value; a zero standard error gives 1 for a zero
/// estimate and 0 otherwise.
pub fn normal_p_value(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        stats::two_sided_normal_p(estimate / se)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-unit changes used by the DD estimators.
pub(crate) fn unit_changes(panel: &Panel, outcome: &Variable, period: Period) -> Result<BTreeMap<FirmId, f64>> {
    let w = panel.windows();
    let years = w.years(period);
    Ok(window_change(panel, outcome, w.base_year, &years, Scale::Log)?.changes)
}

/// Treated and controls restricted to units with a change, plus per-treated
/// weight rows renormalized over controls with data.
struct MatchedChanges {
    treated_delta: Vec<f64>,
    treated_rows: Vec<Vec<(usize, f64)>>,
    control_delta: Vec<Option<f64>>,
    dropped: Vec<FirmId>,
}

fn matched_changes(weights: &MatchWeights, changes: &BTreeMap<FirmId, f64>) -> MatchedChanges {
    let control_delta: Vec<Option<f64>> = weights.controls.iter().map(|id| changes.get(id).copied()).collect();
    let mut out = MatchedChanges {
        treated_delta: Vec::new(),
        treated_rows: Vec::new(),
        control_delta,
        dropped: weights.unmatched.clone(),
    };
    for (i, id) in weights.treated.iter().enumerate() {
        let row: Vec<(usize, f64)> = weights.rows[i]
            .iter()
            .filter(|(k, w)| *w > 0.0 && out.control_delta[*k].is_some())
            .copied()
            .collect();
        let total: f64 = row.iter().map(|(_, w)| w).sum();
        match changes.get(id) {
            Some(d) if total > 0.0 => {
                out.treated_delta.push(*d);
                out.treated_rows
                    .push(row.into_iter().map(|(k, w)| (k, w / total)).collect());
            }
            _ => out.dropped.push(id.clone()),
        }
    }
    out
}

fn counterfactual(row: &[(usize, f64)], control_delta: &[Option<f64>]) -> f64 {
    row.iter()
        .map(|(k, w)| w * control_delta[*k].expect("rows only reference controls with data"))
        .sum()
}

/// Matched DD point estimate from fixed weights; exposed for callers that
/// bring their own per-unit changes.
pub fn dd_estimate(weights: &MatchWeights, changes: &BTreeMap<FirmId, f64>) -> Result<(f64, usize)> {
    let m = matched_changes(weights, changes);
    if m.treated_delta.is_empty() {
        return Err(Error::EmptyTreated);
    }
    let total: f64 = m
        .treated_delta
        .iter()
        .zip(&m.treated_rows)
        .map(|(d, row)| d - counterfactual(row, &m.control_delta))
        .sum();
    Ok((total / m.treated_delta.len() as f64, m.treated_delta.len()))
}

/// Bootstrap distribution of the matched DD estimate.
///
/// The two groups are resampled independently with replacement (N1 treated
/// draws, N0 control draws, counting only units with data) while the match
/// links stay fixed. The treated term is the mean change of the drawn treated
/// firms. A control's weight is its draw count times the total weight the
/// full treated sample gives it, and the counterfactual is the weighted mean
/// of control changes. Replication `b` draws from seed
/// `derive_seed(seed, BOOTSTRAP, b)`; a replication in which no matched
/// control is drawn is NaN.
///
/// Links are not re-formed inside a replication: repeating the
/// nearest-neighbour search on resampled controls overstates the variance
/// of 1:1 matching with replacement. Treated draws do not carry their links
/// either, since that would count the control noise once through the pair
/// differences and again through the control draws.
pub fn bootstrap_dd(
    weights: &MatchWeights,
    changes: &BTreeMap<FirmId, f64>,
    options: &BootstrapOptions,
) -> Result<Vec<f64>> {
    let m = matched_changes(weights, changes);
    if m.treated_delta.is_empty() {
        return Err(Error::EmptyTreated);
    }
    let avail: Vec<usize> = (0..weights.controls.len())
        .filter(|k| m.control_delta[*k].is_some())
        .collect();
    if avail.is_empty() {
        return Err(Error::NoControls);
    }
    let n1 = m.treated_delta.len();
    let n0 = avail.len();
    let mut received = vec![0.0; weights.controls.len()];
    for row in &m.treated_rows {
        for &(k, w) in row {
            received[k] += w;
        }
    }
    let mut draws = Vec::with_capacity(options.reps);
    for b in 0..options.reps {
        let mut rng = rng_for(options.seed, streams::BOOTSTRAP, b as u64);
        let mut treated_sum = 0.0;
        for _ in 0..n1 {
            treated_sum += m.treated_delta[rng.random_range(0..n1)];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..n0 {
            let k = avail[rng.random_range(0..n0)];
            if received[k] > 0.0 {
                num += received[k] * m.control_delta[k].expect("available");
                den += received[k];
            }
        }
        draws.push(if den > 0.0 {
            treated_sum / n1 as f64 - num / den
        } else {
            f64::NAN
        });
    }
    Ok(draws)
}

/// Sample standard deviation of bootstrap replicates, ignoring failed ones.
pub fn bootstrap_se(draws: &[f64]) -> Option<f64> {
    let ok: Vec<f64> = draws.iter().copied().filter(|d| d.is_finite()).collect();
    (ok.len() >= 2).then(|| stats::sample_variance(&ok).sqrt())
}

/// Conditional DD matching estimate
/// `(1/N1) sum_i [ dY_i - sum_k W(i,k) dY_k ]` with `dY` the per-unit log
/// change from the base year to `period`, and its firm bootstrap SE.
///
/// Treated units without data are dropped; weight rows are renormalized
/// over controls with data.
pub fn att_dd_matching(
    panel: &Panel,
    weights: &MatchWeights,
    outcome: &Variable,
    period: Period,
    bootstrap: &BootstrapOptions,
) -> Result<AttEstimate> {
    let changes = unit_changes(panel, outcome, period)?;
    att_from_changes(weights, &changes, outcome.to_string(), period, bootstrap)
}

pub(crate) fn att_from_changes(
    weights: &MatchWeights,
    changes: &BTreeMap<FirmId, f64>,
    outcome: String,
    period: Period,
    bootstrap: &BootstrapOptions,
) -> Result<AttEstimate> {
    let m = matched_changes(weights, changes);
    let (estimate, n_treated) = dd_estimate(weights, changes)?;
    let se = if bootstrap.reps > 0 {
        bootstrap_se(&bootstrap_dd(weights, changes, bootstrap)?)
    } else {
        None
    };
    let k = weights.design.as_ref().map_or(1, |d| d.k);
    Ok(AttEstimate {
        outcome,
        period,
        estimator: Estimator::NearestNeighbor { k },
        estimate,
        se,
        p_value: se.map(|s| normal_p_value(estimate, s)),
        n_treated,
        n_controls: m.control_delta.iter().filter(|d| d.is_some()).count(),
        dropped_treated: m.dropped,
    })
}

/// Weighted least squares fit with its HC1 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub weights: DVector<f64>,
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    /// Heteroskedasticity-robust covariance, `n/(n-p)` small-sample factor.
    pub vcov: DMatrix<f64>,
}

impl RegressionResult {
    pub fn nobs(&self) -> usize {
        self.response.len()
    }

    pub fn standard_errors(&self) -> DVector<f64> {
        self.vcov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    fn bread(&self) -> Result<DMatrix<f64>> {
        let mut xw = self.design.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= self.weights[i];
        }
        self.design.tr_mul(&xw).try_inverse().ok_or(Error::SingularDesign)
    }
}

/// Minimizes `sum w_i (y_i - x_i'b)^2` through a QR factorization of the
/// square-root-weighted design.
pub fn weighted_least_squares(
    names: Vec<String>,
    design: DMatrix<f64>,
    response: DVector<f64>,
    weights: DVector<f64>,
) -> Result<RegressionResult> {
    let (n, p) = design.shape();
    if response.len() != n || weights.len() != n || names.len() != p {
        return Err(Error::InvalidArgument(
            "regression inputs have inconsistent sizes".into(),
        ));
    }
    if n <= p {
        return Err(Error::TooFewObservations {
            needed: p + 1,
            found: n,
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("regression weights must be nonnegative".into()));
    }
    let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut xs = design.clone();
    for (i, mut row) in xs.row_iter_mut().enumerate() {
        row *= root[i];
    }
    let ys = DVector::from_iterator(n, response.iter().zip(&root).map(|(y, r)| y * r));
    let qr = xs.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().tr_mul(&ys);
    let coefficients = r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)?;
    let residuals = &response - &design * &coefficients;
    let mut result = RegressionResult {
        names,
        coefficients,
        residuals,
        weights,
        design,
        response,
        vcov: DMatrix::zeros(p, p),
    };
    let singletons: Vec<usize> = (0..n).collect();
    result.vcov = sandwich(&result, &singletons, n as f64 / (n - p) as f64)?;
    Ok(result)
}

fn sandwich<C: Ord + Clone>(result: &RegressionResult, clusters: &[C], factor: f64) -> Result<DMatrix<f64>> {
    let p = result.design.ncols();
    let mut sums: BTreeMap<C, DVector<f64>> = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        let score = result.design.row(i).transpose() * (result.weights[i] * result.residuals[i]);
        sums.entry(c.clone()).and_modify(|s| *s += &score).or_insert(score);
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in sums.values() {
        meat += s * s.transpose();
    }
    let bread = result.bread()?;
    let v = &bread * meat * &bread * factor;
    Ok((&v + v.transpose()) * 0.5)
}

/// Cluster-robust sandwich covariance with the CR1 factor
/// `G/(G-1) * (n-1)/(n-p)`; with singleton clusters this equals HC1.
pub fn robust_cluster_se<C: Ord + Clone>(result: &RegressionResult, clusters: &[C]) -> Result<DMatrix<f64>> {
    let n = result.nobs();
    if clusters.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} cluster labels for {n} observations",
            clusters.len()
        )));
    }
    let mut distinct: Vec<&C> = clusters.iter().collect();
    distinct.sort();
    distinct.dedup();
    let g = distinct.len();
    if g < 2 {
        return Err(Error::SingleCluster);
    }
    let p = result.design.ncols();
    let factor = g as f64 / (g - 1) as f64 * (n - 1) as f64 / (n - p) as f64;
    sandwich(result, clusters, factor)
}

/// Propensity-reweighted DD regression: weighted least squares of the
/// per-unit log change on a constant, the treatment dummy and optional
/// covariates. Treated units weigh 1; controls weigh `p/(1-p)`, rescaled to
/// sum to the number of treated. The effect is the treatment coefficient
/// with its HC1 standard error (one observation per firm, so firm
/// clustering coincides with HC1).
pub fn att_reweighted_ols(
    panel: &Panel,
    units: &[ScoredUnit],
    outcome: &Variable,
    covariates: Option<&CovariateSet>,
    period: Period,
) -> Result<(AttEstimate, RegressionResult)> {
    let changes = unit_changes(panel, outcome, period)?;
    reweighted_from_changes(units, &changes, covariates, outcome.to_string(), period)
}

pub(crate) fn reweighted_from_changes(
    units: &[ScoredUnit],
    changes: &BTreeMap<FirmId, f64>,
    covariates: Option<&CovariateSet>,
    outcome: String,
    period: Period,
) -> Result<(AttEstimate, RegressionResult)> {
    if let Some(u) = units.iter().find(|u| !(u.score > 0.0 && u.score < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "score of `{}` is {} (must lie strictly inside (0, 1))",
            u.firm_id, u.score
        )));
    }
    let cov_index: Option<BTreeMap<&str, usize>> = covariates.map(|c| {
        c.unit_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    });
    let mut sorted: Vec<&ScoredUnit> = units.iter().collect();
    sorted.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    let mut used = Vec::new();
    let mut dropped = Vec::new();
    for u in sorted {
        let has_cov = cov_index
            .as_ref()
            .is_none_or(|idx| idx.contains_key(u.firm_id.as_str()));
        match changes.get(&u.firm_id) {
            Some(d) if has_cov => used.push((u, *d)),
            _ if u.treated => dropped.push(u.firm_id.clone()),
            _ => {}
        }
    }
    let n1 = used.iter().filter(|(u, _)| u.treated).count();
    let n0 = used.len() - n1;
    if n1 == 0 {
        return Err(Error::EmptyTreated);
    }
    if n0 == 0 {
        return Err(Error::NoControls);
    }
    let odds_total: f64 = used
        .iter()
        .filter(|(u, _)| !u.treated)
        .map(|(u, _)| u.score / (1.0 - u.score))
        .sum();
    let weights = DVector::from_iterator(
        used.len(),
        used.iter().map(|(u, _)| {
            if u.treated {
                1.0
            } else {
                u.score / (1.0 - u.score) / odds_total * n1 as f64
            }
        }),
    );
    let extra = covariates.map_or(0, |c| c.names().len());
    let mut names = vec!["(intercept)".to_string(), "treated".to_string()];
    if let Some(c) = covariates {
        names.extend(c.names().iter().cloned());
    }
    let mut design = DMatrix::zeros(used.len(), 2 + extra);
    for (i, (u, _)) in used.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = f64::from(u.treated);
        if let (Some(c), Some(idx)) = (covariates, &cov_index) {
            let row = idx[u.firm_id.as_str()];
            for j in 0..extra {
                design[(i, 2 + j)] = c.values()[(row, j)];
            }
        }
    }
    let response = DVector::from_iterator(used.len(), used.iter().map(|(_, d)| *d));
    let reg = weighted_least_squares(names, design, response, weights)?;
    let estimate = reg.coefficients[1];
    let se = reg.vcov[(1, 1)].max(0.0).sqrt();
    let df = (reg.nobs() - reg.coefficients.len()) as f64;
    let p_value = if se > 0.0 {
        let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (2.0 * t.sf((estimate / se).abs())).min(1.0)
    } else {
        normal_p_value(estimate, se)
    };
    let est = AttEstimate {
        outcome,
        period,
        estimator: Estimator::ReweightedOls,
        estimate,
        se: Some(se),
        p_value: Some(p_value),
        n_treated: n1,
        n_controls: n0,
        dropped_treated: dropped,
    };
    Ok((est, reg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(id: &str, score: f64, treated: bool) -> ScoredUnit {
        ScoredUnit {
            firm_id: id.into(),
            score,
            treated,
        }
    }

    #[test]
    fn exact_twin_gets_full_weight() {
        let units = [unit("t", 0.3, true), unit("a", 0.3, false), unit("b", 0.31, false)];
        let w = nn_match(&units, 1, true).unwrap();
        assert_eq!(w.row(0), &[(0, 1.0)]);
    }

    #[test]
    fn exhausting_pool_weights_everyone_equally() {
        let units = [
            unit("t1", 0.2, true),
            unit("t2", 0.7, true),
            unit("a", 0.1, false),
            unit("b", 0.5, false),
            unit("c", 0.9, false),
        ];
        let w = nn_match(&units, 10, true).unwrap();
        for i in 0..2 {
            let mut row = w.row(i).to_vec();
            row.sort_by_key(|e| e.0);
            assert_eq!(row, vec![(0, 1.0 / 3.0), (1, 1.0 / 3.0), (2, 1.0 / 3.0)]);
        }
    }

    #[test]
    fn distance_ties_go_to_smaller_id() {
        let units = [unit("t", 0.5, true), unit("z", 0.4, false), unit("m", 0.6, false)];
        let w = nn_match(&units, 1, true).unwrap();
        assert_eq!(w.controls()[w.row(0)[0].0], "m");
    }

    #[test]
    fn without_replacement_serves_ids_in_order() {
        let units = [
            unit("t2", 0.5, true),
            unit("t1", 0.5, true),
            unit("t3", 0.5, true),
            unit("a", 0.45, false),
            unit("b", 0.9, false),
        ];
        let w = nn_match(&units, 1, false).unwrap();
        assert_eq!(w.treated(), &["t1".to_string(), "t2".to_string()]);
        assert_eq!(w.controls()[w.row(0)[0].0], "a");
        assert_eq!(w.controls()[w.row(1)[0].0], "b");
        assert_eq!(w.unmatched(), &["t3".to_string()]);
    }

    #[test]
    fn invalid_k_and_empty_pool() {
        let units = [unit("t", 0.5, true), unit("c", 0.5, false)];
        assert!(matches!(nn_match(&units, 0, true), Err(Error::InvalidArgument(_))));
        assert!(matches!(nn_match(&units[..1], 1, true), Err(Error::NoControls)));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = MatchWeights::new(vec!["t".into()], vec!["c".into()], vec![vec![(0, 0.9)]]);
        assert!(err.is_err());
    }

    #[test]
    fn hand_dd_estimate() {
        // dY: t1 = 0.5, t2 = -0.1; controls 0.1, 0.3, -0.2.
        // t1 -> 0.5*c1 + 0.5*c2 = 0.2, t2 -> c3 = -0.2
        // ((0.5 - 0.2) + (-0.1 + 0.2)) / 2 = 0.2
        let w = MatchWeights::new(
            vec!["t1".into(), "t2".into()],
            vec!["c1".into(), "c2".into(), "c3".into()],
            vec![vec![(0, 0.5), (1, 0.5)], vec![(2, 1.0)]],
        )
        .unwrap();
        let changes: BTreeMap<FirmId, f64> = [("t1", 0.5), ("t2", -0.1), ("c1", 0.1), ("c2", 0.3), ("c3", -0.2)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let (est, n) = dd_estimate(&w, &changes).unwrap();
        assert!((est - 0.2).abs() < 1e-15);
        assert_eq!(n, 2);
    }

    #[test]
    fn hc1_reduces_from_cluster_formula() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = DVector::from_vec(vec![0.1, 0.9, 2.2, 2.8, 4.3]);
        let w = DVector::from_vec(vec![1.0, 2.0, 1.0, 0.5, 1.0]);
        let reg = weighted_least_squares(vec!["a".into(), "b".into()], x, y, w).unwrap();
        let ids: Vec<usize> = (0..5).collect();
        let v = robust_cluster_se(&reg, &ids).unwrap();
        assert!((v - &reg.vcov).abs().max() < 1e-14);
        assert!(matches!(robust_cluster_se(&reg, &[0; 5]), Err(Error::SingleCluster)));
    }
}

//! Cobb-Douglas stochastic production frontiers.
//!
//! The model is `ln y = c + b_k ln K + b_l ln L + b_e ln E + nu + u` with
//! `u ~ N(0, sigma_u^2)` noise and `nu = -w <= 0` inefficiency, where `w` is
//! a `N(mu_v, sigma_v^2)` variable truncated to `w >= 0`. When `sigma_v = 0`
//! inefficiency is identically zero whatever `mu_v`.
//!
//! Labour is employees, energy is electricity plus all fuels (MWh), capital
//! and output are in EUR 1000.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{FirmId, Panel, Variable};
use crate::stats;

pub const INPUT_NAMES: [&str; 3] = ["capital", "labour", "energy"];
const PARAM_COUNT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierOptions {
    pub min_obs: usize,
    /// Stop when the largest absolute component of the average
    /// log-likelihood gradient is at most this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FrontierOptions {
    fn default() -> Self {
        FrontierOptions {
            min_obs: 50,
            tolerance: 1e-6,
            max_iter: 500,
        }
    }
}

/// Frontier coefficients and error scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierParams {
    pub constant: f64,
    /// Capital, labour, energy elasticities.
    pub elasticities: [f64; 3],
    pub sigma_u: f64,
    pub mu_v: f64,
    pub sigma_v: f64,
}

impl FrontierParams {
    fn residual(&self, y: f64, x: &[f64; 3]) -> f64 {
        y - self.constant - self.elasticities[0] * x[0] - self.elasticities[1] * x[1] - self.elasticities[2] * x[2]
    }

    fn check_scales(&self) -> Result<()> {
        if !(self.sigma_u >= 0.0 && self.sigma_v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frontier scales must be nonnegative (sigma_u = {}, sigma_v = {})",
                self.sigma_u, self.sigma_v
            )));
        }
        if self.sigma_u == 0.0 && self.sigma_v == 0.0 {
            return Err(Error::DegenerateScales);
        }
        Ok(())
    }
}

/// Logged output and inputs of one industry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierData {
    pub ln_output: Vec<f64>,
    /// ln capital, ln labour, ln energy.
    pub ln_inputs: Vec<[f64; 3]>,
    pub keys: Vec<(FirmId, i32)>,
}

impl FrontierData {
    pub fn new(ln_output: Vec<f64>, ln_inputs: Vec<[f64; 3]>) -> Result<Self> {
        if ln_output.len() != ln_inputs.len() {
            return Err(Error::InvalidArgument("output and inputs differ in length".into()));
        }
        let keys = (0..ln_output.len()).map(|i| (format!("obs{i}"), 0)).collect();
        Ok(FrontierData {
            ln_output,
            ln_inputs,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.ln_output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_output.is_empty()
    }
}

/// Observations of one industry (all years). Firm-years with a missing
/// value are listed in the second element; nonpositive values are errors.
pub fn frontier_data(panel: &Panel, industry: u16) -> Result<(FrontierData, Vec<(FirmId, i32)>)> {
    let mut data = FrontierData {
        ln_output: Vec::new(),
        ln_inputs: Vec::new(),
        keys: Vec::new(),
    };
    let mut omitted = Vec::new();
    let vars = [
        Variable::Output,
        Variable::Capital,
        Variable::Employees,
        Variable::EnergyUse,
    ];
    for rec in panel.records().iter().filter(|r| r.industry == industry) {
        let vals: Option<Vec<f64>> = vars.iter().map(|v| rec.value(v)).collect();
        let Some(vals) = vals else {
            omitted.push((rec.firm_id.clone(), rec.year));
            continue;
        };
        if let Some((v, x)) = vars.iter().zip(&vals).find(|(_, x)| !(**x > 0.0)) {
            return Err(Error::NonPositive {
                variable: v.to_string(),
                firm_id: rec.firm_id.clone(),
                year: rec.year,
                value: *x,
            });
        }
        data.ln_output.push(vals[0].ln());
        data.ln_inputs.push([vals[1].ln(), vals[2].ln(), vals[3].ln()]);
        data.keys.push((rec.firm_id.clone(), rec.year));
    }
    Ok((data, omitted))
}

/// Log density of the composed error `eps = u - w`.
pub fn log_density(eps: f64, mu: f64, sigma_u: f64, sigma_v: f64) -> f64 {
    if sigma_v == 0.0 {
        return stats::norm_ln_pdf(eps / sigma_u) - sigma_u.ln();
    }
    if sigma_u == 0.0 {
        if eps > 0.0 {
            return f64::NEG_INFINITY;
        }
        return stats::norm_ln_pdf((-eps - mu) / sigma_v) - sigma_v.ln() - stats::norm_ln_cdf(mu / sigma_v);
    }
    let s2 = sigma_u * sigma_u + sigma_v * sigma_v;
    let s = s2.sqrt();
    let a = (eps + mu) / s;
    let b = (mu * sigma_u * sigma_u - eps * sigma_v * sigma_v) / (s * sigma_u * sigma_v);
    -s.ln() + stats::norm_ln_pdf(a) + stats::norm_ln_cdf(b) - stats::norm_ln_cdf(mu / sigma_v)
}

/// Per-observation log density terms with the observation-free parts
/// (`ln sigma`, `ln Phi(mu/sigma_v)` and its Mills ratio) computed once.
struct DensityTerms {
    mu: f64,
    su: f64,
    sv: f64,
    s2: f64,
    s: f64,
    dn: f64,
    const_ll: f64,
    mr: f64,
}

impl DensityTerms {
    fn new(mu: f64, su: f64, sv: f64) -> Self {
        let s2 = su * su + sv * sv;
        let s = s2.sqrt();
        let r = mu / sv;
        DensityTerms {
            mu,
            su,
            sv,
            s2,
            s,
            dn: s * su * sv,
            const_ll: -s.ln() - stats::norm_ln_cdf(r),
            mr: stats::mills(r),
        }
    }

    /// Log density and its partial derivatives with respect to
    /// `(eps, mu, sigma_u, sigma_v)`.
    fn eval(&self, eps: f64) -> (f64, [f64; 4]) {
        let DensityTerms {
            mu,
            su,
            sv,
            s2,
            s,
            dn,
            const_ll,
            mr,
        } = *self;
        let a = (eps + mu) / s;
        let b = (mu * su * su - eps * sv * sv) / dn;
        let (ln_cdf_b, mb) = stats::ln_cdf_and_mills(b);
        let ll = const_ll + stats::norm_ln_pdf(a) + ln_cdf_b;
        let d_eps = -a / s - mb * sv / (s * su);
        let d_mu = -a / s + mb * su / (s * sv) - mr / sv;
        let d_su = -su / s2 + a * a * su / s2 + mb * (2.0 * mu * su / dn - b * (s2 + su * su) / (s2 * su));
        let d_sv = -sv / s2
            + a * a * sv / s2
            + mb * (-2.0 * eps * sv / dn - b * (s2 + sv * sv) / (s2 * sv))
            + mr * mu / (sv * sv);
        (ll, [d_eps, d_mu, d_su, d_sv])
    }
}

/// Sum of composed-error log densities.
pub fn loglikelihood(params: &FrontierParams, data: &FrontierData) -> Result<f64> {
    params.check_scales()?;
    Ok(data
        .ln_output
        .iter()
        .zip(&data.ln_inputs)
        .map(|(y, x)| log_density(params.residual(*y, x), params.mu_v, params.sigma_u, params.sigma_v))
        .sum())
}

fn loglikelihood_and_gradient(params: &FrontierParams, data: &FrontierData) -> Result<(f64, [f64; PARAM_COUNT])> {
    if !(params.sigma_u > 0.0 && params.sigma_v > 0.0) {
        return Err(Error::InvalidArgument("gradient needs positive scales".into()));
    }
    let terms = DensityTerms::new(params.mu_v, params.sigma_u, params.sigma_v);
    let mut ll = 0.0;
    let mut g = [0.0; PARAM_COUNT];
    for (y, x) in data.ln_output.iter().zip(&data.ln_inputs) {
        let (l, d) = terms.eval(params.residual(*y, x));
        ll += l;
        g[0] -= d[0];
        for j in 0..3 {
            g[1 + j] -= d[0] * x[j];
        }
        g[4] += d[2];
        g[5] += d[1];
        g[6] += d[3];
    }
    Ok((ll, g))
}

/// Analytic gradient of [`loglikelihood`] with respect to
/// `(constant, b_k, b_l, b_e, sigma_u, mu_v, sigma_v)`. Both scales must be
/// positive.
pub fn loglikelihood_gradient(params: &FrontierParams, data: &FrontierData) -> Result<[f64; PARAM_COUNT]> {
    Ok(loglikelihood_and_gradient(params, data)?.1)
}

/// Optimizer coordinates: coefficients, ln sigma_u, mu_v, ln sigma_v.
type Theta = DVector<f64>;

fn to_params(theta: &Theta) -> FrontierParams {
    FrontierParams {
        constant: theta[0],
        elasticities: [theta[1], theta[2], theta[3]],
        sigma_u: theta[4].exp(),
        mu_v: theta[5],
        sigma_v: theta[6].exp(),
    }
}

fn to_theta(p: &FrontierParams) -> Theta {
    DVector::from_vec(vec![
        p.constant,
        p.elasticities[0],
        p.elasticities[1],
        p.elasticities[2],
        p.sigma_u.ln(),
        p.mu_v,
        p.sigma_v.ln(),
    ])
}

/// Average log-likelihood and its gradient in optimizer coordinates.
fn objective(theta: &Theta, data: &FrontierData) -> (f64, Theta) {
    let p = to_params(theta);
    let n = data.len() as f64;
    let (ll, mut g) = loglikelihood_and_gradient(&p, data).expect("scales are positive in log coordinates");
    g[4] *= p.sigma_u;
    g[6] *= p.sigma_v;
    (ll / n, DVector::from_iterator(PARAM_COUNT, g.iter().map(|v| v / n)))
}

fn max_abs(v: &Theta) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central-difference Jacobian of the average gradient.
fn fd_hessian(theta: &Theta, data: &FrontierData) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(PARAM_COUNT, PARAM_COUNT);
    for j in 0..PARAM_COUNT {
        let step = 1e-5 * (1.0 + theta[j].abs());
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[j] += step;
        down[j] -= step;
        let col = (objective(&up, data).1 - objective(&down, data).1) / (2.0 * step);
        h.set_column(j, &col);
    }
    (&h + h.transpose()) * 0.5
}

struct OlsFit {
    coefficients: [f64; 4],
    residuals: Vec<f64>,
    std_errors: [f64; 4],
}

fn ols(data: &FrontierData) -> Result<OlsFit> {
    let n = data.len();
    let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { data.ln_inputs[i][j - 1] });
    let y = DVector::from_column_slice(&data.ln_output);
    let xtx = x.tr_mul(&x);
    let chol = xtx.clone().cholesky().ok_or(Error::SingularDesign)?;
    let b = chol.solve(&x.tr_mul(&y));
    let resid = &y - &x * &b;
    let s2 = resid.norm_squared() / (n - 4) as f64;
    let inv = chol.inverse();
    Ok(OlsFit {
        coefficients: [b[0], b[1], b[2], b[3]],
        residuals: resid.iter().copied().collect(),
        std_errors: std::array::from_fn(|j| (s2 * inv[(j, j)]).sqrt()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierModel {
    pub industry: u16,
    pub params: FrontierParams,
    /// Standard errors aligned with `(constant, b_k, b_l, b_e, sigma_u,
    /// mu_v, sigma_v)`; `None` where not identified (the boundary solution).
    pub std_errors: [Option<f64>; PARAM_COUNT],
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// OLS residuals were skewed the wrong way, so the estimate sits on the
    /// `sigma_v = 0` boundary (OLS coefficients, no inefficiency).
    pub boundary: bool,
    pub omitted: Vec<(FirmId, i32)>,
    /// Average log-likelihood at the start and after every accepted step.
    pub trace: Vec<f64>,
}

impl FrontierModel {
    pub fn returns_to_scale(&self) -> f64 {
        returns_to_scale(&self.params)
    }
}

/// Sum of the three input elasticities.
pub fn returns_to_scale(params: &FrontierParams) -> f64 {
    params.elasticities.iter().sum()
}

/// Maximum likelihood frontier for one industry, pooling all panel years.
pub fn fit_frontier(panel: &Panel, industry: u16, options: &FrontierOptions) -> Result<FrontierModel> {
    let (data, omitted) = frontier_data(panel, industry)?;
    let mut model = fit_frontier_data(&data, industry, options)?;
    model.omitted = omitted;
    Ok(model)
}

/// Fits prepared log data.
///
/// Starts from OLS. Residuals with nonnegative third moment admit no
/// inefficiency, so the OLS fit is returned as a flagged boundary solution.
/// Otherwise the half-normal method-of-moments split of the residual
/// variance seeds a BFGS ascent with a backtracking line search that only
/// accepts steps raising the likelihood, finished by Newton steps on a
/// finite-difference Hessian.
pub fn fit_frontier_data(data: &FrontierData, industry: u16, options: &FrontierOptions) -> Result<FrontierModel> {
    let n = data.len();
    if n < options.min_obs.max(5) {
        return Err(Error::TooFewObservations {
            needed: options.min_obs.max(5),
            found: n,
        });
    }
    let fit = ols(data)?;
    let m2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let m3 = fit.residuals.iter().map(|e| e * e * e).sum::<f64>() / n as f64;
    if m2 == 0.0 {
        return Err(Error::DegenerateScales);
    }
    if m3 >= 0.0 {
        let params = FrontierParams {
            constant: fit.coefficients[0],
            elasticities: [fit.coefficients[1], fit.coefficients[2], fit.coefficients[3]],
            sigma_u: m2.sqrt(),
            mu_v: 0.0,
            sigma_v: 0.0,
        };
        let mut se = [None; PARAM_COUNT];
        for j in 0..4 {
            se[j] = Some(fit.std_errors[j]);
        }
        se[4] = Some(m2.sqrt() / (2.0 * n as f64).sqrt());
        return Ok(FrontierModel {
            industry,
            log_likelihood: loglikelihood(&params, data)?,
            params,
            std_errors: se,
            n_obs: n,
            iterations: 0,
            converged: true,
            boundary: true,
            omitted: Vec::new(),
            trace: Vec::new(),
        });
    }

    // Half-normal moments: third central moment of -w is
    // -sigma^3 sqrt(2/pi) (4/pi - 1).
    let k3 = (2.0 / std::f64::consts::PI).sqrt() * (4.0 / std::f64::consts::PI - 1.0);
    let var_share = 1.0 - 2.0 / std::f64::consts::PI;
    let mut sigma_w = (-m3 / k3).cbrt();
    if var_share * sigma_w * sigma_w > 0.95 * m2 {
        sigma_w = (0.95 * m2 / var_share).sqrt();
    }
    let sigma_n = (m2 - var_share * sigma_w * sigma_w).sqrt();
    let start = FrontierParams {
        constant: fit.coefficients[0] + sigma_w * (2.0 / std::f64::consts::PI).sqrt(),
        elasticities: [fit.coefficients[1], fit.coefficients[2], fit.coefficients[3]],
        sigma_u: sigma_n,
        mu_v: 0.0,
        sigma_v: sigma_w,
    };

    let mut theta = to_theta(&start);
    let (mut f, mut g) = objective(&theta, data);
    let mut h_inv = DMatrix::<f64>::identity(PARAM_COUNT, PARAM_COUNT);
    let mut iterations = 0;
    let mut trace = vec![f];
    while max_abs(&g) > options.tolerance && iterations < options.max_iter {
        iterations += 1;
        let mut dir = &h_inv * &g;
        let mut slope = g.dot(&dir);
        if !(slope > 0.0) {
            h_inv = DMatrix::identity(PARAM_COUNT, PARAM_COUNT);
            dir = g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta + &dir * step;
            let (cf, cg) = objective(&cand, data);
            if cf.is_finite() && cf >= f + 1e-4 * step * slope {
                accepted = Some((cand, cf, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((next, nf, ng)) = accepted else {
            break;
        };
        let s = &next - &theta;
        let y = &g - &ng; // gradient of the minimized objective -f changes by -(ng - g)
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if iterations == 1 {
                h_inv *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(PARAM_COUNT, PARAM_COUNT);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
        theta = next;
        f = nf;
        g = ng;
        trace.push(f);
    }

    // Newton polish; only steps that raise the likelihood are taken.
    for _ in 0..20 {
        if max_abs(&g) <= options.tolerance * 1e-2 {
            break;
        }
        let h = fd_hessian(&theta, data);
        let Some(chol) = (-h).cholesky() else { break };
        let dir = chol.solve(&g);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = &theta + &dir * step;
            let (cf, cg) = objective(&cand, data);
            if cf.is_finite() && cf >= f && max_abs(&cg) < max_abs(&g) {
                theta = cand;
                f = cf;
                g = cg;
                trace.push(f);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }

    let params = to_params(&theta);
    let converged = max_abs(&g) <= options.tolerance;
    let info = -fd_hessian(&theta, data) * n as f64;
    let cov = info.try_inverse();
    let mut se = [None; PARAM_COUNT];
    if let Some(cov) = cov {
        let scale = [1.0, 1.0, 1.0, 1.0, params.sigma_u, 1.0, params.sigma_v];
        for j in 0..PARAM_COUNT {
            let v = cov[(j, j)];
            if v >= 0.0 {
                se[j] = Some(v.sqrt() * scale[j]);
            }
        }
    }
    Ok(FrontierModel {
        industry,
        params,
        std_errors: se,
        log_likelihood: f * n as f64,
        n_obs: n,
        iterations,
        converged,
        boundary: false,
        omitted: Vec::new(),
        trace,
    })
}

/// `E[w | eps]`, the expected inefficiency given a composed residual: the
/// mean of `N(mu*, s*^2)` truncated to `w >= 0`, with
/// `mu* = (mu sigma_u^2 - eps sigma_v^2) / sigma^2` and
/// `s* = sigma_u sigma_v / sigma`.
pub fn conditional_inefficiency(eps: f64, mu: f64, sigma_u: f64, sigma_v: f64) -> f64 {
    if sigma_v == 0.0 {
        return 0.0;
    }
    if sigma_u == 0.0 {
        return (-eps).max(0.0);
    }
    let s2 = sigma_u * sigma_u + sigma_v * sigma_v;
    let mu_star = (mu * sigma_u * sigma_u - eps * sigma_v * sigma_v) / s2;
    let s_star = sigma_u * sigma_v / s2.sqrt();
    s_star * stats::z_plus_mills(mu_star / s_star)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyScore {
    pub firm_id: FirmId,
    pub year: i32,
    /// Expected inefficiency in log points, `E[-nu | residual] >= 0`.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceReport {
    pub scores: Vec<EfficiencyScore>,
    /// Firm-years without complete output and inputs.
    pub omitted: Vec<(FirmId, i32)>,
}

/// Distance to the frontier for every scorable observation of the model's
/// industry.
pub fn efficiency_distance(model: &FrontierModel, panel: &Panel) -> Result<DistanceReport> {
    let (data, omitted) = frontier_data(panel, model.industry)?;
    let p = &model.params;
    let scores = data
        .ln_output
        .iter()
        .zip(&data.ln_inputs)
        .zip(&data.keys)
        .map(|((y, x), (id, year))| EfficiencyScore {
            firm_id: id.clone(),
            year: *year,
            distance: conditional_inefficiency(p.residual(*y, x), p.mu_v, p.sigma_u, p.sigma_v),
        })
        .collect();
    Ok(DistanceReport { scores, omitted })
}

/// Fits every industry with at least one observation, keyed by code.
pub fn fit_all_industries(panel: &Panel, options: &FrontierOptions) -> Result<BTreeMap<u16, FrontierModel>> {
    panel
        .industries()
        .into_iter()
        .map(|code| fit_frontier(panel, code, options).map(|m| (code, m)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishing_inefficiency_gives_normal_density() {
        let eps = 0.3;
        let normal = stats::norm_ln_pdf(eps / 0.2) - 0.2f64.ln();
        assert_eq!(log_density(eps, 0.0, 0.2, 0.0), normal);
        assert!((log_density(eps, 0.0, 0.2, 1e-7) - normal).abs() < 1e-5);
    }

    #[test]
    fn no_inefficiency_means_zero_distance() {
        for eps in [-2.0, 0.0, 1.5] {
            assert_eq!(conditional_inefficiency(eps, 0.4, 0.3, 0.0), 0.0);
        }
    }

    #[test]
    fn distance_weakly_decreases_in_residual() {
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let eps = -3.0 + 0.03 * f64::from(i);
            let d = conditional_inefficiency(eps, 0.1, 0.2, 0.3);
            assert!(d >= 0.0 && d <= prev);
            prev = d;
        }
    }

    #[test]
    fn returns_to_scale_sums_elasticities() {
        let p = FrontierParams {
            constant: 0.0,
            elasticities: [0.178, 0.677, 0.183],
            sigma_u: 1.0,
            mu_v: 0.0,
            sigma_v: 1.0,
        };
        assert!((returns_to_scale(&p) - 1.038).abs() < 1e-12);
    }

    #[test]
    fn degenerate_scales_rejected() {
        let data = FrontierData::new(vec![1.0], vec![[0.0; 3]]).unwrap();
        let p = FrontierParams {
            constant: 0.0,
            elasticities: [0.0; 3],
            sigma_u: 0.0,
            mu_v: 0.0,
            sigma_v: 0.0,
        };
        assert!(matches!(loglikelihood(&p, &data), Err(Error::DegenerateScales)));
    }

    #[test]
    fn too_few_observations() {
        let data = FrontierData::new(vec![1.0], vec![[0.0; 3]]).unwrap();
        let err = fit_frontier_data(&data, 17, &FrontierOptions::default()).unwrap_err();
        assert!(matches!(err, Error::TooFewObservations { needed: 50, found: 1 }));
    }
}

//! Python bindings: panels, the propensity and matching estimators, the
//! stochastic frontier and whole pipeline stages.

use std::path::Path;

use ets_causal::config::RunConfig;
use ets_causal::frontier::{self, FrontierData, FrontierOptions};
use ets_causal::matching::{self, AttEstimate, BootstrapOptions, ScoredUnit};
use ets_causal::panel::{self, Panel, Period, Variable};
use ets_causal::pipeline::{estimate_att as run_att, AttSettings};
use ets_causal::propensity::{self, CovariateSet};
use ets_causal::run::{self, Stage};
use ets_causal::satt::{self as satt_mod, SattSettings};
use ets_causal::synthgen::{self, DgpConfig};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: ets_causal::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Firm-year panel.
#[pyclass(name = "Panel", module = "ets_causal", frozen)]
struct PyPanel {
    inner: Panel,
}

#[pymethods]
impl PyPanel {
    /// Reads a panel CSV.
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path)?;
        let inner = panel::ingest_panel(file, None).map_err(py_err)?;
        Ok(PyPanel { inner })
    }

    /// Generates a synthetic panel; `kind` is "did" or "sfa".
    #[staticmethod]
    #[pyo3(signature = (kind = "did", seed = 0, n_firms = None))]
    fn simulate(kind: &str, seed: u64, n_firms: Option<usize>) -> PyResult<Self> {
        let mut config = match kind {
            "did" => DgpConfig::default(),
            "sfa" => DgpConfig::sfa_default(),
            other => return Err(PyValueError::new_err(format!("unknown generator `{other}`"))),
        };
        if let Some(n) = n_firms {
            config.n_firms = n;
        }
        let (inner, _) = match kind {
            "did" => synthgen::generate_did_panel(&config, seed),
            _ => synthgen::generate_sfa_panel(&config, seed),
        }
        .map_err(py_err)?;
        Ok(PyPanel { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(firm_id, industry, treated)` per firm.
    fn firms(&self) -> Vec<(String, u16, bool)> {
        self.inner
            .firms()
            .into_iter()
            .map(|f| (f.firm_id, f.industry, f.ets))
            .collect()
    }

    fn years(&self) -> Vec<i32> {
        self.inner.years()
    }

    fn value(&self, firm_id: &str, year: i32, variable: &str) -> PyResult<Option<f64>> {
        let var: Variable = variable.parse().map_err(py_err)?;
        Ok(self.inner.value(firm_id, year, &var))
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        panel::write_panel_csv(&self.inner, &mut buf).map_err(py_err)?;
        Ok(String::from_utf8(buf).expect("panel CSV is UTF-8"))
    }
}

/// One treatment-effect estimate.
#[pyclass(name = "Estimate", module = "ets_causal", frozen, get_all)]
struct PyEstimate {
    outcome: String,
    period: String,
    estimator: String,
    estimate: f64,
    se: Option<f64>,
    p_value: Option<f64>,
    n_treated: usize,
    n_controls: usize,
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate({} {} {}: {:.4})",
            self.outcome, self.period, self.estimator, self.estimate
        )
    }
}

impl From<AttEstimate> for PyEstimate {
    fn from(e: AttEstimate) -> Self {
        PyEstimate {
            outcome: e.outcome,
            period: e.period.to_string(),
            estimator: e.estimator.to_string(),
            estimate: e.estimate,
            se: e.se,
            p_value: e.p_value,
            n_treated: e.n_treated,
            n_controls: e.n_controls,
        }
    }
}

/// Matched DiD effects per outcome and phase for NN(1:k) and reweighted OLS.
#[pyfunction]
#[pyo3(signature = (panel, outcomes = vec!["co2".to_string()], k = vec![1, 20], bootstrap_reps = 499, seed = 0, ols = true))]
fn estimate_att(
    panel: &PyPanel,
    outcomes: Vec<String>,
    k: Vec<usize>,
    bootstrap_reps: usize,
    seed: u64,
    ols: bool,
) -> PyResult<Vec<PyEstimate>> {
    let settings = AttSettings {
        outcomes: outcomes
            .iter()
            .map(|s| s.parse())
            .collect::<ets_causal::Result<_>>()
            .map_err(py_err)?,
        k_values: k,
        ols,
        bootstrap: BootstrapOptions {
            reps: bootstrap_reps,
            seed,
        },
        ..AttSettings::default()
    };
    let res = run_att(&panel.inner, &settings).map_err(py_err)?;
    Ok(res.estimates.into_iter().map(PyEstimate::from).collect())
}

/// Effects on the log distance to the frontier, per year and phase.
#[pyfunction]
#[pyo3(signature = (panel, k = vec![1, 5, 20], bootstrap_reps = 0, seed = 0))]
fn satt(panel: &PyPanel, k: Vec<usize>, bootstrap_reps: usize, seed: u64) -> PyResult<Vec<PyEstimate>> {
    let models = frontier::fit_all_industries(&panel.inner, &FrontierOptions::default()).map_err(py_err)?;
    let dp = satt_mod::build_distance_panel(&panel.inner, &models).map_err(py_err)?;
    let settings = SattSettings {
        k_values: k,
        bootstrap: BootstrapOptions {
            reps: bootstrap_reps,
            seed,
        },
        ..SattSettings::default()
    };
    let report = satt_mod::satt(&dp, &settings).map_err(py_err)?;
    Ok(report.effects.into_iter().map(PyEstimate::from).collect())
}

/// Probit MLE. Returns `(coefficients, standard_errors, log_likelihood)`,
/// intercept first when requested.
#[pyfunction]
#[pyo3(signature = (x, treated, intercept = true))]
fn fit_probit(x: Vec<Vec<f64>>, treated: Vec<bool>, intercept: bool) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let ncol = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != ncol) {
        return Err(PyValueError::new_err("rows of x differ in length"));
    }
    let values = DMatrix::from_fn(x.len(), ncol, |i, j| x[i][j]);
    let names = (0..ncol).map(|j| format!("x{j}")).collect();
    let ids = (0..x.len()).map(|i| format!("{i:012}")).collect();
    let set = CovariateSet::new(names, values, ids, intercept).map_err(py_err)?;
    let model = propensity::fit_probit(&set, &treated).map_err(py_err)?;
    Ok((
        model.coefficients.iter().copied().collect(),
        model.standard_errors().iter().copied().collect(),
        model.log_likelihood,
    ))
}

/// Nearest-neighbour matching on scores. Returns
/// `(treated_index, control_index, weight)` triples indexing the inputs.
#[pyfunction]
#[pyo3(signature = (scores, treated, k = 1, with_replacement = true))]
fn nn_match(
    scores: Vec<f64>,
    treated: Vec<bool>,
    k: usize,
    with_replacement: bool,
) -> PyResult<Vec<(usize, usize, f64)>> {
    if scores.len() != treated.len() {
        return Err(PyValueError::new_err("scores and treated differ in length"));
    }
    let units: Vec<ScoredUnit> = scores
        .iter()
        .zip(&treated)
        .enumerate()
        .map(|(i, (s, t))| ScoredUnit {
            firm_id: format!("{i:012}"),
            score: *s,
            treated: *t,
        })
        .collect();
    let w = matching::nn_match(&units, k, with_replacement).map_err(py_err)?;
    let index = |id: &str| id.parse::<usize>().expect("ids are indices");
    let mut out = Vec::new();
    for (i, row) in w.rows().iter().enumerate() {
        for (c, weight) in row {
            out.push((index(&w.treated()[i]), index(&w.controls()[*c]), *weight));
        }
    }
    Ok(out)
}

/// Fitted Cobb-Douglas frontier.
#[pyclass(name = "Frontier", module = "ets_causal", frozen, get_all)]
struct PyFrontier {
    constant: f64,
    elasticities: [f64; 3],
    sigma_u: f64,
    mu_v: f64,
    sigma_v: f64,
    log_likelihood: f64,
    returns_to_scale: f64,
    converged: bool,
    boundary: bool,
}

/// Frontier MLE on log output and `(ln K, ln L, ln E)` rows.
#[pyfunction]
fn fit_frontier(ln_output: Vec<f64>, ln_inputs: Vec<[f64; 3]>) -> PyResult<PyFrontier> {
    let data = FrontierData::new(ln_output, ln_inputs).map_err(py_err)?;
    let m = frontier::fit_frontier_data(&data, 0, &FrontierOptions::default()).map_err(py_err)?;
    Ok(PyFrontier {
        constant: m.params.constant,
        elasticities: m.params.elasticities,
        sigma_u: m.params.sigma_u,
        mu_v: m.params.mu_v,
        sigma_v: m.params.sigma_v,
        log_likelihood: m.log_likelihood,
        returns_to_scale: m.returns_to_scale(),
        converged: m.converged,
        boundary: m.boundary,
    })
}

/// Expected inefficiency given a composed residual.
#[pyfunction]
fn conditional_inefficiency(eps: f64, mu: f64, sigma_u: f64, sigma_v: f64) -> f64 {
    frontier::conditional_inefficiency(eps, mu, sigma_u, sigma_v)
}

fn parse_stage(name: &str) -> PyResult<Stage> {
    Ok(match name {
        "simulate" => Stage::Simulate,
        "ingest-check" => Stage::IngestCheck,
        "propensity" => Stage::Propensity,
        "match" => Stage::Match,
        "att" => Stage::Att,
        "frontier" => Stage::Frontier,
        "satt" => Stage::Satt,
        "report" => Stage::Report,
        "mc" => Stage::MonteCarlo,
        other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
    })
}

/// Runs a pipeline stage from a TOML configuration and returns
/// `(file_name, content)` pairs, each content starting with the header
/// line.
#[pyfunction]
#[pyo3(signature = (config_toml, stage, base_dir = "."))]
fn run_stage(config_toml: &str, stage: &str, base_dir: &str) -> PyResult<Vec<(String, String)>> {
    let config = RunConfig::parse(config_toml).map_err(py_err)?;
    let artifacts = run::execute(&config, Path::new(base_dir), parse_stage(stage)?).map_err(py_err)?;
    let header = run::header(&config);
    Ok(artifacts
        .into_iter()
        .map(|a| (a.name, format!("{header}{}", a.content)))
        .collect())
}

/// Parses a period label such as "Phase II" or "2008"; returns its
/// canonical form.
#[pyfunction]
fn period_label(label: &str) -> PyResult<String> {
    let p: Period = label.parse().map_err(py_err)?;
    Ok(p.to_string())
}

#[pymodule]
#[pyo3(name = "ets_causal")]
fn ets_causal_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyPanel>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyFrontier>()?;
    m.add_function(wrap_pyfunction!(estimate_att, m)?)?;
    m.add_function(wrap_pyfunction!(satt, m)?)?;
    m.add_function(wrap_pyfunction!(fit_probit, m)?)?;
    m.add_function(wrap_pyfunction!(nn_match, m)?)?;
    m.add_function(wrap_pyfunction!(fit_frontier, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_inefficiency, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_function(wrap_pyfunction!(period_label, m)?)?;
    Ok(())
}

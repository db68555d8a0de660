//! Monte Carlo evaluation of the estimators on generated panels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::frontier::{fit_all_industries, FrontierOptions};
use crate::matching::{AttEstimate, Estimator};
use crate::panel::{Period, PhaseWindows};
use crate::pipeline::{estimate_att, AttSettings};
use crate::satt::{build_distance_panel, satt, SattSettings};
use crate::seed::{derive_seed, streams};
use crate::stats;
use crate::synthgen::{generate_did_panel, generate_sfa_panel, DgpConfig, TruthRecord};

/// Nominal level for coverage and rejection rates.
pub const NOMINAL_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum McPipeline {
    Att(AttSettings),
    Satt {
        settings: SattSettings,
        frontier: FrontierOptions,
    },
}

/// Summary of one estimator over the replications.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub estimator: Estimator,
    pub outcome: String,
    pub period: Period,
    /// Successful replications.
    pub reps: usize,
    pub failures: usize,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Undefined with fewer than two replications.
    pub sd: Option<f64>,
    /// Share of 95% normal intervals covering the truth.
    pub coverage: Option<f64>,
    /// Share of replications rejecting a zero effect at 5%.
    pub rejection_rate: Option<f64>,
    /// Monte Carlo standard error of the mean estimate.
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub rows: Vec<McSummary>,
    pub reps: usize,
    /// Replications that failed as a whole, with the error message.
    pub failures: Vec<(usize, String)>,
}

#[derive(Default)]
struct Accumulator {
    truth: Option<f64>,
    estimates: Vec<f64>,
    ses: Vec<Option<f64>>,
    ps: Vec<Option<f64>>,
}

fn replicate(
    config: &DgpConfig,
    pipeline: &McPipeline,
    seed: u64,
) -> Result<(Vec<AttEstimate>, TruthRecord, PhaseWindows)> {
    match pipeline {
        McPipeline::Att(settings) => {
            let (panel, truth) = generate_did_panel(config, seed)?;
            let mut settings = settings.clone();
            settings.bootstrap.seed = derive_seed(seed, streams::BOOTSTRAP, 0);
            let res = estimate_att(&panel, &settings)?;
            Ok((res.estimates, truth, panel.windows().clone()))
        }
        McPipeline::Satt { settings, frontier } => {
            let (panel, truth) = generate_sfa_panel(config, seed)?;
            let models = fit_all_industries(&panel, frontier)?;
            let dp = build_distance_panel(&panel, &models)?;
            let mut settings = settings.clone();
            settings.bootstrap.seed = derive_seed(seed, streams::BOOTSTRAP, 0);
            let windows = settings.windows.clone();
            Ok((satt(&dp, &settings)?.effects, truth, windows))
        }
    }
}

/// Runs `reps` replications with seeds `derive_seed(master, REPLICATION, r)`.
/// A failing replication is recorded and does not stop the run.
pub fn monte_carlo(config: &DgpConfig, pipeline: &McPipeline, reps: usize, master_seed: u64) -> Result<McReport> {
    config.validate()?;
    let mut acc: BTreeMap<(String, Period, Estimator), Accumulator> = BTreeMap::new();
    let mut order: Vec<(String, Period, Estimator)> = Vec::new();
    let mut failures = Vec::new();
    for r in 0..reps {
        let seed = derive_seed(master_seed, streams::REPLICATION, r as u64);
        match replicate(config, pipeline, seed) {
            Ok((estimates, truth, windows)) => {
                for e in estimates {
                    let key = (e.outcome.clone(), e.period, e.estimator);
                    if !acc.contains_key(&key) {
                        order.push(key.clone());
                    }
                    let a = acc.entry(key).or_default();
                    if a.truth.is_none() {
                        a.truth = truth.effect(&e.outcome, e.period, &windows);
                    }
                    a.estimates.push(e.estimate);
                    a.ses.push(e.se);
                    a.ps.push(e.p_value);
                }
            }
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let a = &acc[&key];
            summarize(key, a, reps)
        })
        .collect();
    Ok(McReport { rows, reps, failures })
}

fn share(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let flags: Option<Vec<bool>> = flags.collect();
    let flags = flags?;
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

fn summarize(key: (String, Period, Estimator), a: &Accumulator, reps: usize) -> McSummary {
    let (outcome, period, estimator) = key;
    let n = a.estimates.len();
    let truth = a.truth.unwrap_or(f64::NAN);
    let mean = stats::mean(&a.estimates);
    let mse = a.estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| stats::sample_variance(&a.estimates).sqrt());
    let z = stats::norm_quantile(1.0 - NOMINAL_LEVEL / 2.0);
    McSummary {
        estimator,
        outcome,
        period,
        reps: n,
        failures: reps - n,
        true_value: truth,
        mean_estimate: mean,
        bias: mean - truth,
        rmse: mse.sqrt(),
        sd,
        coverage: share(
            a.estimates
                .iter()
                .zip(&a.ses)
                .map(|(e, s)| s.map(|s| (e - truth).abs() <= z * s)),
        ),
        rejection_rate: share(a.ps.iter().map(|p| p.map(|p| p < NOMINAL_LEVEL))),
        mc_se: sd.map(|s| s / (n as f64).sqrt()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl McReport {
    pub fn row(&self, estimator: Estimator, outcome: &str, period: Period) -> Option<&McSummary> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.outcome == outcome && r.period == period)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "estimator,outcome,phase,k,reps,failures,true_value,mean_estimate,bias,rmse,sd,coverage,rejection_rate,mc_se\n",
        );
        for r in &self.rows {
            let k = match r.estimator {
                Estimator::NearestNeighbor { k } => k.to_string(),
                Estimator::ReweightedOls => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.estimator,
                r.outcome,
                r.period,
                k,
                r.reps,
                r.failures,
                r.true_value,
                r.mean_estimate,
                r.bias,
                r.rmse,
                opt(r.sd),
                opt(r.coverage),
                opt(r.rejection_rate),
                opt(r.mc_se)
            );
        }
        out
    }
}

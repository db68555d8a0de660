//! Treatment effects on the distance to the production frontier.
//!
//! Frontier distances are attached to the panel as `distance` and, floored
//! at [`DISTANCE_FLOOR`] and logged, as `log_distance`. Treated firms are
//! matched with replacement to controls on a probit score of pre-treatment
//! covariates; effects are matched DD contrasts of log distance, per year
//! against the base year and pooled per phase.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::frontier::{efficiency_distance, FrontierModel};
use crate::matching::{att_from_changes, nn_match, AttEstimate, BootstrapOptions, MatchWeights};
use crate::panel::{window_change, FirmId, Panel, Period, PhaseWindows, Scale, Variable};
use crate::pipeline::{propensity_stage, PropensityStage};
use crate::propensity::Covariate;
use crate::seed::derive_seed;
use crate::stats;

pub const DISTANCE_FLOOR: f64 = 1e-6;
pub const DISTANCE: &str = "distance";
pub const LOG_DISTANCE: &str = "log_distance";

pub fn log_distance_variable() -> Variable {
    Variable::Extra(LOG_DISTANCE.to_string())
}

pub fn distance_variable() -> Variable {
    Variable::Extra(DISTANCE.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistancePanel {
    pub panel: Panel,
    /// Firm-years whose distance was raised to the floor before logging.
    pub floored: Vec<(FirmId, i32)>,
    /// Firm-years without complete output and inputs.
    pub omitted: Vec<(FirmId, i32)>,
}

/// Scores every observation with the frontier of its industry.
pub fn build_distance_panel(panel: &Panel, models: &BTreeMap<u16, FrontierModel>) -> Result<DistancePanel> {
    let mut distance = BTreeMap::new();
    let mut log_distance = BTreeMap::new();
    let mut floored = Vec::new();
    let mut omitted = Vec::new();
    for code in panel.industries() {
        let model = models.get(&code).ok_or(Error::MissingModel(code))?;
        let report = efficiency_distance(model, panel)?;
        omitted.extend(report.omitted);
        for s in report.scores {
            let key = (s.firm_id, s.year);
            if s.distance < DISTANCE_FLOOR {
                floored.push(key.clone());
            }
            log_distance.insert(key.clone(), s.distance.max(DISTANCE_FLOOR).ln());
            distance.insert(key, s.distance);
        }
    }
    let panel = panel
        .with_extra(DISTANCE, &distance)
        .with_extra(LOG_DISTANCE, &log_distance);
    Ok(DistancePanel {
        panel,
        floored,
        omitted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SattSettings {
    pub covariates: Vec<Covariate>,
    pub k_values: Vec<usize>,
    pub bootstrap: BootstrapOptions,
    pub windows: PhaseWindows,
    /// Drop treated firms outside the control score range.
    pub common_support: bool,
}

/// Default matching covariates: log output, capital, employees and energy,
/// industry, and the pre-period mean log distance.
pub fn default_satt_covariates() -> Vec<Covariate> {
    [
        "ln_output",
        "ln_capital",
        "ln_employees",
        "ln_energy",
        "industry",
        DISTANCE,
    ]
    .iter()
    .map(|s| s.parse().expect("valid covariate name"))
    .collect()
}

pub fn default_satt_windows() -> PhaseWindows {
    PhaseWindows {
        pretreatment_years: vec![2003, 2004],
        phase1_years: vec![2005, 2006, 2007],
        phase2_years: (2008..=2012).collect(),
        base_year: 2003,
    }
}

impl Default for SattSettings {
    fn default() -> Self {
        SattSettings {
            covariates: default_satt_covariates(),
            k_values: vec![1, 5, 20],
            bootstrap: BootstrapOptions::default(),
            windows: default_satt_windows(),
            common_support: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SattReport {
    pub k_values: Vec<usize>,
    /// Yearly effects (`Period::Year`) then phase effects, per k.
    pub effects: Vec<AttEstimate>,
    /// `(k, period)` pairs without an estimable matched sample.
    pub missing: Vec<(usize, Period)>,
    pub n_treated: usize,
    pub n_controls: usize,
}

impl SattReport {
    pub fn get(&self, k: usize, period: Period) -> Option<&AttEstimate> {
        self.effects
            .iter()
            .find(|e| e.period == period && e.estimator == crate::matching::Estimator::NearestNeighbor { k })
    }
}

/// Matched samples for SATT: probit on pre-treatment covariates averaged
/// over the pretreatment years, then k-NN with replacement per k.
pub struct SattMatching {
    pub stage: PropensityStage,
    pub weights: BTreeMap<usize, MatchWeights>,
}

pub fn satt_matching(dp: &DistancePanel, settings: &SattSettings) -> Result<SattMatching> {
    let panel = dp.panel.clone().with_windows(settings.windows.clone())?;
    let early: Vec<i32> = settings
        .windows
        .pretreatment_years
        .iter()
        .copied()
        .filter(|y| *y < settings.windows.treatment_start())
        .collect();
    let stage = propensity_stage(&panel, &settings.covariates, &early, settings.common_support)?;
    let mut weights = BTreeMap::new();
    for &k in &settings.k_values {
        weights.insert(k, nn_match(&stage.units, k, true)?);
    }
    Ok(SattMatching { stage, weights })
}

fn changes(panel: &Panel, windows: &PhaseWindows, years: &[i32]) -> Result<BTreeMap<FirmId, f64>> {
    Ok(window_change(panel, &log_distance_variable(), windows.base_year, years, Scale::Level)?.changes)
}

/// Per-k bootstrap seed; shared by all periods so that the yearly and phase
/// estimates of one k resample the same firms.
fn bootstrap_for(settings: &SattSettings, k: usize) -> BootstrapOptions {
    BootstrapOptions {
        reps: settings.bootstrap.reps,
        seed: derive_seed(settings.bootstrap.seed, crate::seed::streams::BOOTSTRAP, k as u64),
    }
}

fn estimate_periods(
    dp: &DistancePanel,
    matching: &SattMatching,
    settings: &SattSettings,
    periods: &[(Period, Vec<i32>)],
) -> Result<SattReport> {
    let mut effects = Vec::new();
    let mut missing = Vec::new();
    let mut cache: BTreeMap<Vec<i32>, BTreeMap<FirmId, f64>> = BTreeMap::new();
    for &k in &settings.k_values {
        let w = &matching.weights[&k];
        for (period, years) in periods {
            if !cache.contains_key(years) {
                cache.insert(years.clone(), changes(&dp.panel, &settings.windows, years)?);
            }
            let ch = &cache[years];
            match att_from_changes(w, ch, LOG_DISTANCE.to_string(), *period, &bootstrap_for(settings, k)) {
                Ok(mut est) => {
                    est.estimator = crate::matching::Estimator::NearestNeighbor { k };
                    effects.push(est);
                }
                Err(Error::EmptyTreated) | Err(Error::NoControls) => missing.push((k, *period)),
                Err(e) => return Err(e),
            }
        }
    }
    let units = &matching.stage.units;
    Ok(SattReport {
        k_values: settings.k_values.clone(),
        effects,
        missing,
        n_treated: units.iter().filter(|u| u.treated).count(),
        n_controls: units.iter().filter(|u| !u.treated).count(),
    })
}

fn post_years(windows: &PhaseWindows) -> Vec<i32> {
    let mut years: Vec<i32> = windows
        .phase1_years
        .iter()
        .chain(&windows.phase2_years)
        .copied()
        .collect();
    years.sort_unstable();
    years
}

/// Effect per post year `t`: mean over treated of
/// `[dd_i(base -> t) - sum_k W(i,k) dd_k(base -> t)]` in log distance.
pub fn satt_yearly(dp: &DistancePanel, matching: &SattMatching, settings: &SattSettings) -> Result<SattReport> {
    let periods: Vec<(Period, Vec<i32>)> = post_years(&settings.windows)
        .into_iter()
        .map(|y| (Period::Year(y), vec![y]))
        .collect();
    estimate_periods(dp, matching, settings, &periods)
}

/// One effect per phase from per-firm mean log distance over phase years.
pub fn satt_phase(dp: &DistancePanel, matching: &SattMatching, settings: &SattSettings) -> Result<SattReport> {
    let w = &settings.windows;
    let periods = vec![
        (Period::PhaseI, w.phase1_years.clone()),
        (Period::PhaseII, w.phase2_years.clone()),
    ];
    estimate_periods(dp, matching, settings, &periods)
}

/// Yearly then phase effects for every k.
pub fn satt(dp: &DistancePanel, settings: &SattSettings) -> Result<SattReport> {
    let matching = satt_matching(dp, settings)?;
    let mut periods: Vec<(Period, Vec<i32>)> = post_years(&settings.windows)
        .into_iter()
        .map(|y| (Period::Year(y), vec![y]))
        .collect();
    periods.push((Period::PhaseI, settings.windows.phase1_years.clone()));
    periods.push((Period::PhaseII, settings.windows.phase2_years.clone()));
    estimate_periods(dp, &matching, settings, &periods)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Treated,
    Control,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Treated => "treated",
            Group::Control => "control",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MedianSeries {
    pub values: BTreeMap<i32, f64>,
    /// Panel years in which the group had no scored observation.
    pub empty_years: Vec<i32>,
}

/// Yearly median frontier distance of one group, optionally within one
/// industry.
pub fn median_distance_series(dp: &DistancePanel, group: Group, industry: Option<u16>) -> MedianSeries {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    let var = distance_variable();
    for r in dp.panel.records() {
        if r.ets != (group == Group::Treated) || industry.is_some_and(|c| c != r.industry) {
            continue;
        }
        let entry = by_year.entry(r.year).or_default();
        if let Some(v) = r.value(&var) {
            entry.push(v);
        }
    }
    let mut out = MedianSeries::default();
    for year in dp.panel.years() {
        match by_year.get(&year).and_then(|v| stats::median(v)) {
            Some(m) => {
                out.values.insert(year, m);
            }
            None => out.empty_years.push(year),
        }
    }
    out
}

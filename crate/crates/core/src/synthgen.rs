//! Synthetic firm panels with known treatment effects.
//!
//! Two generators share one configuration type:
//!
//! * [`generate_did_panel`] produces emissions, output, employment, exports
//!   and energy use for firms selected into treatment by a probit on their
//!   observed base-year size and energy intensity. Log outcomes follow
//!   `ln Y_it(0) = level_i + year_t + post_t (x_i'b + eta_i) + e_it` and
//!   `ln Y_it(1) = ln Y_it(0) + tau(phase of t)`.
//! * [`generate_sfa_panel`] produces Cobb-Douglas output with normal noise
//!   and truncated-normal inefficiency, the latter scaled by per-year
//!   multipliers and, for treated firms, by `exp(tau)` in each phase.
//!
//! Default magnitudes are a calibration to orders of magnitude of German
//! manufacturing (roughly 1% treated, log-normal sizes); they are not
//! estimates of anything.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::FrontierParams;
use crate::panel::{FirmId, FirmYearRecord, Panel, Period, PhaseWindows, BASE_FUELS};
use crate::seed::{rng_for, streams};
use crate::stats;

/// One industry of the synthetic economy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndustryConfig {
    pub code: u16,
    /// Share of firms; shares are normalized over all industries.
    pub share: f64,
    /// Shift of the treatment index.
    #[serde(default)]
    pub selection: f64,
    /// Mean log energy intensity, MWh per EUR 1000 of output.
    #[serde(default)]
    pub ln_energy_intensity: f64,
}

/// Probit treatment assignment on centred base-year covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Fixed index intercept; when absent it is solved so that the mean
    /// true propensity equals `target_share`.
    pub intercept: Option<f64>,
    pub target_share: f64,
    pub ln_employees: f64,
    pub ln_energy_intensity: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            intercept: None,
            target_share: 0.01,
            ln_employees: 0.5,
            ln_energy_intensity: 0.6,
        }
    }
}

/// Post-period trend coefficients on centred base-year covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendConfig {
    pub ln_employees: f64,
    pub ln_energy_intensity: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            ln_employees: -0.04,
            ln_energy_intensity: -0.06,
        }
    }
}

/// True log-point effect on one outcome per trading phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectConfig {
    pub outcome: String,
    #[serde(default)]
    pub phase1: f64,
    #[serde(default)]
    pub phase2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontierDgpConfig {
    pub constant: f64,
    /// Capital, labour, energy.
    pub elasticities: [f64; 3],
    pub sigma_u: f64,
    pub mu_v: f64,
    pub sigma_v: f64,
    /// Draw one inefficiency term per firm instead of per firm-year.
    pub per_firm: bool,
    /// Multipliers of inefficiency by year (e.g. a demand shock). A pooled
    /// frontier is misspecified when these differ from 1, so the default
    /// has none; see [`FrontierDgpConfig::with_crisis`].
    pub year_multipliers: BTreeMap<String, f64>,
    /// Log effect of treatment on inefficiency in each phase.
    pub effect_phase1: f64,
    pub effect_phase2: f64,
}

impl Default for FrontierDgpConfig {
    fn default() -> Self {
        FrontierDgpConfig {
            constant: 3.7,
            elasticities: [0.18, 0.68, 0.18],
            sigma_u: 0.02,
            mu_v: 0.3,
            sigma_v: 0.15,
            per_firm: false,
            year_multipliers: BTreeMap::new(),
            effect_phase1: -0.0289,
            effect_phase2: -0.0265,
        }
    }
}

impl FrontierDgpConfig {
    pub fn params(&self) -> FrontierParams {
        FrontierParams {
            constant: self.constant,
            elasticities: self.elasticities,
            sigma_u: self.sigma_u,
            mu_v: self.mu_v,
            sigma_v: self.sigma_v,
        }
    }

    /// Inefficiency scaled by 1.5 in 2009.
    pub fn with_crisis(mut self) -> Self {
        self.year_multipliers.insert("2009".to_string(), 1.5);
        self
    }

    fn multiplier(&self, year: i32) -> f64 {
        self.year_multipliers.get(&year.to_string()).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub n_firms: usize,
    pub years: Vec<i32>,
    pub windows: PhaseWindows,
    pub industries: Vec<IndustryConfig>,
    pub selection: SelectionConfig,
    pub trend: TrendConfig,
    pub effects: Vec<EffectConfig>,
    /// Common log year effects, keyed by year.
    pub year_effects: BTreeMap<String, f64>,
    pub firm_effect_sd: f64,
    pub noise_sd: f64,
    pub frontier: Option<FrontierDgpConfig>,
    pub max_attempts: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let year_effects = [
            (2004, 0.02),
            (2005, 0.03),
            (2006, 0.05),
            (2007, 0.07),
            (2008, 0.05),
            (2009, -0.08),
            (2010, 0.0),
        ];
        DgpConfig {
            n_firms: 5000,
            years: (2002..=2010).collect(),
            windows: PhaseWindows::default(),
            industries: vec![
                IndustryConfig {
                    code: 17,
                    share: 0.25,
                    selection: 0.3,
                    ln_energy_intensity: 0.0,
                },
                IndustryConfig {
                    code: 20,
                    share: 0.35,
                    selection: 0.0,
                    ln_energy_intensity: -0.5,
                },
                IndustryConfig {
                    code: 23,
                    share: 0.25,
                    selection: 0.4,
                    ln_energy_intensity: 0.4,
                },
                IndustryConfig {
                    code: 24,
                    share: 0.15,
                    selection: 0.5,
                    ln_energy_intensity: 0.2,
                },
            ],
            selection: SelectionConfig::default(),
            trend: TrendConfig::default(),
            effects: vec![
                effect("co2", 0.0, -0.28),
                effect("output", 0.01, 0.05),
                effect("employees", 0.0, 0.02),
                effect("exports", 0.08, 0.10),
            ],
            year_effects: year_effects.iter().map(|(y, v)| (y.to_string(), *v)).collect(),
            firm_effect_sd: 0.1,
            noise_sd: 0.1,
            frontier: None,
            max_attempts: 10,
        }
    }
}

fn effect(outcome: &str, phase1: f64, phase2: f64) -> EffectConfig {
    EffectConfig {
        outcome: outcome.to_string(),
        phase1,
        phase2,
    }
}

/// Outcomes that can carry a treatment effect in the DiD generator.
pub const DID_OUTCOMES: [&str; 9] = [
    "output",
    "employees",
    "exports",
    "wage",
    "capital",
    "electricity",
    "gas_mwh",
    "oil_mwh",
    "co2",
];

impl DgpConfig {
    /// Defaults for the frontier generator: 2003-2012, 2,000 firms, 5%
    /// treated, pretreatment years 2003-2004 and a 2008-2012 second phase.
    pub fn sfa_default() -> Self {
        DgpConfig {
            n_firms: 2000,
            years: (2003..=2012).collect(),
            windows: PhaseWindows {
                pretreatment_years: vec![2003, 2004],
                phase1_years: vec![2005, 2006, 2007],
                phase2_years: (2008..=2012).collect(),
                base_year: 2003,
            },
            industries: vec![
                IndustryConfig {
                    code: 17,
                    share: 0.5,
                    selection: 0.0,
                    ln_energy_intensity: 0.0,
                },
                IndustryConfig {
                    code: 23,
                    share: 0.5,
                    selection: 0.2,
                    ln_energy_intensity: 0.4,
                },
            ],
            selection: SelectionConfig {
                target_share: 0.05,
                ..SelectionConfig::default()
            },
            effects: Vec::new(),
            year_effects: BTreeMap::new(),
            frontier: Some(FrontierDgpConfig::default()),
            ..DgpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_firms < 2 {
            return bad(format!("n_firms must be at least 2, got {}", self.n_firms));
        }
        if self.industries.is_empty() {
            return bad("at least one industry is required".into());
        }
        if self.industries.iter().any(|i| !(i.share > 0.0)) {
            return bad("industry shares must be positive".into());
        }
        let share = self.selection.target_share;
        if self.selection.intercept.is_none() && !(share > 0.0 && share < 1.0) {
            return bad(format!("target treated share must lie in (0, 1), got {share}"));
        }
        if !(self.firm_effect_sd >= 0.0 && self.noise_sd >= 0.0) {
            return bad("standard deviations must be nonnegative".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        self.windows.validate()?;
        if !self.years.contains(&self.windows.base_year) {
            return bad(format!("base year {} is not a generated year", self.windows.base_year));
        }
        for e in &self.effects {
            if !DID_OUTCOMES.contains(&e.outcome.as_str()) {
                return bad(format!("no generated outcome `{}`", e.outcome));
            }
        }
        for key in self.year_effects.keys() {
            if key.parse::<i32>().is_err() {
                return bad(format!("year effect key `{key}` is not a year"));
            }
        }
        if let Some(f) = &self.frontier {
            if f.sigma_u < 0.0 || f.sigma_v < 0.0 {
                return bad("frontier scales must be nonnegative".into());
            }
            if f.year_multipliers
                .iter()
                .any(|(k, v)| k.parse::<i32>().is_err() || !(*v > 0.0))
            {
                return bad("year multipliers need year keys and positive values".into());
            }
        }
        Ok(())
    }

    fn year_effect(&self, year: i32) -> f64 {
        self.year_effects.get(&year.to_string()).copied().unwrap_or(0.0)
    }

    fn phase_of(&self, year: i32) -> Option<Period> {
        if self.windows.phase1_years.contains(&year) {
            Some(Period::PhaseI)
        } else if self.windows.phase2_years.contains(&year) {
            Some(Period::PhaseII)
        } else {
            None
        }
    }

    fn effect_of(&self, outcome: &str, phase: Option<Period>) -> f64 {
        let Some(e) = self.effects.iter().find(|e| e.outcome == outcome) else {
            return 0.0;
        };
        match phase {
            Some(Period::PhaseI) => e.phase1,
            Some(Period::PhaseII) => e.phase2,
            _ => 0.0,
        }
    }
}

/// Hidden truth behind a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    /// True treatment probability per firm.
    pub propensity: BTreeMap<FirmId, f64>,
    pub selection_intercept: f64,
    /// Per outcome, `(Y(0), Y(1))` aligned with `Panel::records()`.
    pub potential: BTreeMap<String, Vec<(f64, f64)>>,
    /// True log-point ATT per `(outcome, period)`.
    pub true_att: BTreeMap<(String, Period), f64>,
    pub frontier: Option<FrontierParams>,
    /// Inefficiency `nu <= 0` aligned with `Panel::records()`.
    pub inefficiency: Vec<f64>,
    /// Number of the attempt that produced a non-degenerate assignment.
    pub attempt: usize,
}

impl TruthRecord {
    /// True effect for an outcome and period; single years inherit the
    /// effect of their phase. `co2_intensity` is `co2` net of `output`.
    pub fn effect(&self, outcome: &str, period: Period, windows: &PhaseWindows) -> Option<f64> {
        let period = match period {
            Period::Year(y) if windows.phase1_years.contains(&y) => Period::PhaseI,
            Period::Year(y) if windows.phase2_years.contains(&y) => Period::PhaseII,
            Period::Year(_) => return Some(0.0),
            p => p,
        };
        if outcome == "co2_intensity" {
            let c = self.effect("co2", period, windows)?;
            let y = self.effect("output", period, windows)?;
            return Some(c - y);
        }
        self.true_att.get(&(outcome.to_string(), period)).copied()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from `N(mu, sigma^2)` truncated to `[0, inf)` by inverting the
/// upper tail: `w = mu - sigma Phi^-1(v Phi(mu/sigma))`, `v ~ U(0,1)`.
pub fn truncated_normal(rng: &mut ChaCha8Rng, mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let v: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let tail = v * stats::norm_cdf(mu / sigma);
    (mu - sigma * stats::norm_quantile(tail)).max(0.0)
}

fn assign_industries(config: &DgpConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total: f64 = config.industries.iter().map(|i| i.share).sum();
    (0..config.n_firms)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (j, ind) in config.industries.iter().enumerate() {
                acc += ind.share;
                if u < acc {
                    return j;
                }
            }
            config.industries.len() - 1
        })
        .collect()
}

/// Selection index intercept giving a mean propensity of `target`.
fn calibrate_intercept(index: &[f64], target: f64) -> f64 {
    let mean_p = |c: f64| index.iter().map(|x| stats::norm_cdf(c + x)).sum::<f64>() / index.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const MEAN_LN_EMPLOYEES: f64 = 4.1;
const MEAN_LN_OUTPUT: f64 = 9.0;
const MEAN_LN_WAGE: f64 = 10.25;
const LN_CO2_PER_MWH: f64 = -1.4;
const FUEL_SHARES: [f64; 4] = [0.4, 0.35, 0.15, 0.1];

/// Treatment draws from the selection index; returns (D, propensity,
/// intercept).
fn assign_treatment(config: &DgpConfig, index: &[f64], rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>, f64) {
    let intercept = config
        .selection
        .intercept
        .unwrap_or_else(|| calibrate_intercept(index, config.selection.target_share));
    let mut d = Vec::with_capacity(index.len());
    let mut p = Vec::with_capacity(index.len());
    for x in index {
        let z = intercept + x;
        p.push(stats::norm_cdf(z));
        d.push(z + normal(rng) > 0.0);
    }
    (d, p, intercept)
}

fn firm_id(i: usize) -> FirmId {
    format!("F{i:06}")
}

fn empty_fuels() -> BTreeMap<String, Option<f64>> {
    BTreeMap::new()
}

fn fuel_columns() -> Vec<String> {
    BASE_FUELS.iter().map(|s| s.to_string()).collect()
}

struct Draw {
    panel: Panel,
    truth: TruthRecord,
    n_treated: usize,
}

fn retry<F>(config: &DgpConfig, seed: u64, mut draw: F) -> Result<(Panel, TruthRecord)>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Draw>,
{
    config.validate()?;
    for attempt in 0..config.max_attempts {
        let mut rng = rng_for(seed, streams::DGP_ATTEMPT, attempt as u64);
        let mut out = draw(&mut rng)?;
        if out.n_treated > 0 && out.n_treated < config.n_firms {
            out.truth.attempt = attempt;
            return Ok((out.panel, out.truth));
        }
    }
    Err(Error::DegenerateTreatment {
        attempts: config.max_attempts,
    })
}

/// Difference-in-differences panel with known effects.
///
/// Deterministic in `(config, seed)`. A realization with no treated or no
/// control firm is redrawn, up to `max_attempts` draws in total.
pub fn generate_did_panel(config: &DgpConfig, seed: u64) -> Result<(Panel, TruthRecord)> {
    retry(config, seed, |rng| draw_did(config, rng))
}

fn draw_did(config: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let n = config.n_firms;
    let years = &config.years;
    let base = config.windows.base_year;
    let start = config.windows.treatment_start();
    let industry = assign_industries(config, rng);

    // Permanent log levels per outcome, in DID_OUTCOMES order.
    let mut levels = vec![[0.0; 9]; n];
    for i in 0..n {
        let ind = &config.industries[industry[i]];
        let size = normal(rng);
        let intensity = ind.ln_energy_intensity + 0.7 * normal(rng);
        let ln_emp = MEAN_LN_EMPLOYEES + 1.1 * size;
        let ln_out = MEAN_LN_OUTPUT + 1.1 * size + 0.3 * normal(rng);
        let export_share = 1.0 / (1.0 + (0.8 - 0.4 * size - 0.8 * normal(rng)).exp());
        let ln_energy = ln_out + intensity;
        levels[i] = [
            ln_out,
            ln_emp,
            ln_out + export_share.ln(),
            MEAN_LN_WAGE + 0.15 * size + 0.15 * normal(rng),
            ln_out - 0.1 + 0.3 * normal(rng),
            ln_energy + FUEL_SHARES[0].ln(),
            ln_energy + FUEL_SHARES[1].ln(),
            ln_energy + FUEL_SHARES[2].ln(),
            ln_energy + LN_CO2_PER_MWH + 0.2 * normal(rng),
        ];
    }
    let other_fuel_level: Vec<f64> = levels
        .iter()
        .map(|l| l[5] - FUEL_SHARES[0].ln() + FUEL_SHARES[3].ln())
        .collect();

    // Transitory noise and post-period firm effects.
    let n_years = years.len();
    let mut noise = vec![0.0; n * n_years * 10];
    for v in noise.iter_mut() {
        *v = config.noise_sd * normal(rng);
    }
    let mut firm_effect = vec![0.0; n * 10];
    for v in firm_effect.iter_mut() {
        *v = config.firm_effect_sd * normal(rng);
    }
    let base_pos = years.iter().position(|y| *y == base).expect("validated");
    let ln0 = |i: usize, v: usize, t: usize| -> f64 {
        let lvl = if v == 9 { other_fuel_level[i] } else { levels[i][v] };
        lvl + config.year_effect(years[t]) + noise[(i * n_years + t) * 10 + v]
    };

    // Selection on observed base-year employment and energy intensity.
    let mut covs = Vec::with_capacity(n);
    let mut index = Vec::with_capacity(n);
    for i in 0..n {
        let ind = &config.industries[industry[i]];
        let ln_emp = ln0(i, 1, base_pos);
        let energy: f64 = [5, 6, 7, 9].iter().map(|&v| ln0(i, v, base_pos).exp()).sum();
        let ln_int = energy.ln() - ln0(i, 0, base_pos);
        let c_emp = ln_emp - MEAN_LN_EMPLOYEES;
        let c_int = ln_int - ind.ln_energy_intensity;
        covs.push((c_emp, c_int));
        index
            .push(config.selection.ln_employees * c_emp + config.selection.ln_energy_intensity * c_int + ind.selection);
    }
    let (treated, propensity, intercept) = assign_treatment(config, &index, rng);
    let n_treated = treated.iter().filter(|d| **d).count();

    let mut records = Vec::with_capacity(n * n_years);
    let mut potential: BTreeMap<String, Vec<(f64, f64)>> =
        DID_OUTCOMES.iter().map(|o| (o.to_string(), Vec::new())).collect();
    for i in 0..n {
        let trend = config.trend.ln_employees * covs[i].0 + config.trend.ln_energy_intensity * covs[i].1;
        for (t, &year) in years.iter().enumerate() {
            let post = year >= start;
            let phase = config.phase_of(year);
            let mut y0 = [0.0; 10];
            let mut y1 = [0.0; 10];
            for v in 0..10 {
                let shift = if post { trend + firm_effect[i * 10 + v] } else { 0.0 };
                let l0 = ln0(i, v, t) + shift;
                let name = if v == 9 { "other_fuel_mwh" } else { DID_OUTCOMES[v] };
                y0[v] = l0.exp();
                y1[v] = (l0 + config.effect_of(name, phase)).exp();
            }
            let y = if treated[i] { &y1 } else { &y0 };
            for (v, name) in DID_OUTCOMES.iter().enumerate() {
                potential.get_mut(*name).expect("known").push((y0[v], y1[v]));
            }
            let mut fuels = empty_fuels();
            fuels.insert("gas".into(), Some(y[6]));
            fuels.insert("oil".into(), Some(y[7]));
            fuels.insert("other_fuel".into(), Some(y[9]));
            records.push(FirmYearRecord {
                firm_id: firm_id(i),
                year,
                industry: config.industries[industry[i]].code,
                ets: treated[i],
                output: Some(y[0]),
                employees: Some(y[1]),
                exports: Some(y[2]),
                wage: Some(y[3]),
                capital: Some(y[4]),
                electricity: Some(y[5]),
                fuels,
                co2: Some(y[8]),
                extra: BTreeMap::new(),
            });
        }
    }
    let mut true_att = BTreeMap::new();
    for e in &config.effects {
        true_att.insert((e.outcome.clone(), Period::PhaseI), e.phase1);
        true_att.insert((e.outcome.clone(), Period::PhaseII), e.phase2);
    }
    for name in DID_OUTCOMES {
        for p in [Period::PhaseI, Period::PhaseII] {
            true_att.entry((name.to_string(), p)).or_insert(0.0);
        }
    }
    let panel = Panel::new(records, fuel_columns(), config.windows.clone())?;
    Ok(Draw {
        panel,
        truth: TruthRecord {
            propensity: (0..n).map(|i| (firm_id(i), propensity[i])).collect(),
            selection_intercept: intercept,
            potential,
            true_att,
            frontier: None,
            inefficiency: Vec::new(),
            attempt: 0,
        },
        n_treated,
    })
}

/// Stochastic-frontier panel: `ln y = c + b'ln x - w + u` with
/// `w = w0 * m_year * exp(tau(phase) D)`, `w0 ~ N+(mu_v, sigma_v^2)`.
/// The true effect on log inefficiency is stored under `log_distance`.
pub fn generate_sfa_panel(config: &DgpConfig, seed: u64) -> Result<(Panel, TruthRecord)> {
    let frontier = config
        .frontier
        .as_ref()
        .ok_or_else(|| Error::Config("frontier block required for the frontier generator".into()))?;
    retry(config, seed, |rng| draw_sfa(config, frontier, rng))
}

fn draw_sfa(config: &DgpConfig, f: &FrontierDgpConfig, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let n = config.n_firms;
    let years = &config.years;
    let base_pos = years
        .iter()
        .position(|y| *y == config.windows.base_year)
        .expect("validated");
    let industry = assign_industries(config, rng);

    // ln L, ln K, ln E per firm-year.
    let mut inputs = vec![[0.0; 3]; n * years.len()];
    let mut extras = Vec::with_capacity(n);
    for i in 0..n {
        let ind = &config.industries[industry[i]];
        let size = normal(rng);
        let cap_mix = 0.4 * normal(rng);
        let energy_mix = ind.ln_energy_intensity + 0.5 * normal(rng);
        extras.push((
            1.0 / (1.0 + (0.8 - 0.4 * size - 0.8 * normal(rng)).exp()),
            MEAN_LN_WAGE + 0.15 * size + 0.15 * normal(rng),
        ));
        for t in 0..years.len() {
            let ln_l = MEAN_LN_EMPLOYEES + 1.1 * size + 0.05 * normal(rng);
            let ln_k = ln_l + 2.0 + cap_mix + 0.05 * normal(rng);
            let ln_e = ln_l + 1.0 + energy_mix + 0.05 * normal(rng);
            inputs[i * years.len() + t] = [ln_k, ln_l, ln_e];
        }
    }

    let mut index = Vec::with_capacity(n);
    for i in 0..n {
        let ind = &config.industries[industry[i]];
        let [_, ln_l, ln_e] = inputs[i * years.len() + base_pos];
        let c_emp = ln_l - MEAN_LN_EMPLOYEES;
        let c_int = ln_e - ln_l - 1.0 - ind.ln_energy_intensity;
        index
            .push(config.selection.ln_employees * c_emp + config.selection.ln_energy_intensity * c_int + ind.selection);
    }
    let (treated, propensity, intercept) = assign_treatment(config, &index, rng);
    let n_treated = treated.iter().filter(|d| **d).count();

    let mut records = Vec::with_capacity(n * years.len());
    let mut inefficiency = Vec::with_capacity(n * years.len());
    let mut out_pot = Vec::with_capacity(n * years.len());
    for i in 0..n {
        let firm_w = truncated_normal(rng, f.mu_v, f.sigma_v);
        for (t, &year) in years.iter().enumerate() {
            let x = inputs[i * years.len() + t];
            let w0 = if f.per_firm {
                firm_w
            } else {
                truncated_normal(rng, f.mu_v, f.sigma_v)
            } * f.multiplier(year);
            let tau = match config.phase_of(year) {
                Some(Period::PhaseI) => f.effect_phase1,
                Some(Period::PhaseII) => f.effect_phase2,
                _ => 0.0,
            };
            let w1 = w0 * tau.exp();
            let u = f.sigma_u * normal(rng);
            let frontier = f.constant + f.elasticities[0] * x[0] + f.elasticities[1] * x[1] + f.elasticities[2] * x[2];
            let y0 = (frontier - w0 + u).exp();
            let y1 = (frontier - w1 + u).exp();
            out_pot.push((y0, y1));
            let w = if treated[i] { w1 } else { w0 };
            inefficiency.push(-w);
            let output = if treated[i] { y1 } else { y0 };
            let energy = x[2].exp();
            let mut fuels = empty_fuels();
            fuels.insert("gas".into(), Some(energy * FUEL_SHARES[1]));
            fuels.insert("oil".into(), Some(energy * FUEL_SHARES[2]));
            fuels.insert("other_fuel".into(), Some(energy * FUEL_SHARES[3]));
            let co2 = energy * (FUEL_SHARES[1] * 0.2 + FUEL_SHARES[2] * 0.27 + FUEL_SHARES[3] * 0.3);
            records.push(FirmYearRecord {
                firm_id: firm_id(i),
                year,
                industry: config.industries[industry[i]].code,
                ets: treated[i],
                output: Some(output),
                employees: Some(x[1].exp()),
                exports: Some(output * extras[i].0),
                wage: Some(extras[i].1.exp()),
                capital: Some(x[0].exp()),
                electricity: Some(energy * FUEL_SHARES[0]),
                fuels,
                co2: Some(co2),
                extra: BTreeMap::new(),
            });
        }
    }
    let mut true_att = BTreeMap::new();
    true_att.insert((crate::satt::LOG_DISTANCE.to_string(), Period::PhaseI), f.effect_phase1);
    true_att.insert(
        (crate::satt::LOG_DISTANCE.to_string(), Period::PhaseII),
        f.effect_phase2,
    );
    let panel = Panel::new(records, fuel_columns(), config.windows.clone())?;
    Ok(Draw {
        panel,
        truth: TruthRecord {
            propensity: (0..n).map(|i| (firm_id(i), propensity[i])).collect(),
            selection_intercept: intercept,
            potential: BTreeMap::from([("output".to_string(), out_pot)]),
            true_att,
            frontier: Some(f.params()),
            inefficiency,
            attempt: 0,
        },
        n_treated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        DgpConfig::default().validate().unwrap();
        DgpConfig::sfa_default().validate().unwrap();
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = DgpConfig::default();
        c.n_firms = 1;
        assert!(c.validate().is_err());
        let mut c = DgpConfig::default();
        c.noise_sd = -1.0;
        assert!(c.validate().is_err());
        let mut c = DgpConfig::sfa_default();
        c.frontier.as_mut().unwrap().sigma_v = -0.1;
        assert!(generate_sfa_panel(&c, 1).is_err());
        assert!(generate_sfa_panel(&DgpConfig::default(), 1).is_err());
    }

    #[test]
    fn impossible_assignment_is_an_error() {
        let mut c = DgpConfig::default();
        c.n_firms = 20;
        c.selection.intercept = Some(-60.0);
        assert!(matches!(
            generate_did_panel(&c, 3),
            Err(Error::DegenerateTreatment { attempts: 10 })
        ));
    }

    #[test]
    fn truncated_draws_are_nonnegative() {
        let mut rng = rng_for(1, 0, 0);
        for mu in [-3.0, 0.0, 2.0] {
            for _ in 0..1000 {
                assert!(truncated_normal(&mut rng, mu, 0.5) >= 0.0);
            }
        }
        assert_eq!(truncated_normal(&mut rng, 1.0, 0.0), 0.0);
    }
}

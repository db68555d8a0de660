//! Propensity score, matching and ATT estimation over a whole panel.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matching::{
    att_from_changes, nn_match, reweighted_from_changes, unit_changes, AttEstimate, BootstrapOptions, Estimator,
    MatchWeights, ScoredUnit,
};
use crate::panel::{Panel, Period, Variable};
use crate::propensity::{
    build_covariates, common_support_filter, default_covariates, fit_probit, predict_scores, Covariate, CovariateData,
    CovariateSet, ProbitModel, SupportReport,
};

/// Fitted propensity model and the units that enter matching.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityStage {
    pub data: CovariateData,
    pub model: ProbitModel,
    /// Score per row of `data.set`.
    pub scores: Vec<f64>,
    pub support: SupportReport,
    /// Units retained after the support filter.
    pub units: Vec<ScoredUnit>,
}

/// Builds firm covariates averaged over `years`, fits the probit and applies
/// the common-support filter when requested.
pub fn propensity_stage(
    panel: &Panel,
    covariates: &[Covariate],
    years: &[i32],
    common_support: bool,
) -> Result<PropensityStage> {
    let data = build_covariates(panel, covariates, years, true)?;
    let model = fit_probit(&data.set, &data.treated)?;
    let scores = predict_scores(&model, &data.set)?;
    let support = if common_support {
        common_support_filter(&scores, &data.treated)
    } else {
        SupportReport {
            retained: (0..scores.len()).collect(),
            dropped_treated: Vec::new(),
            warning: None,
        }
    };
    let units: Vec<ScoredUnit> = support
        .retained
        .iter()
        .map(|&i| ScoredUnit {
            firm_id: data.set.unit_ids()[i].clone(),
            score: scores[i],
            treated: data.treated[i],
        })
        .collect();
    if !units.iter().any(|u| u.treated) {
        return Err(Error::EmptyTreated);
    }
    Ok(PropensityStage {
        data,
        model,
        scores,
        support,
        units,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttSettings {
    pub covariates: Vec<Covariate>,
    pub outcomes: Vec<Variable>,
    pub periods: Vec<Period>,
    pub k_values: Vec<usize>,
    pub with_replacement: bool,
    /// Include the reweighted OLS estimator.
    pub ols: bool,
    /// Extra regressors for the reweighted OLS, taken in the base year.
    pub ols_covariates: Vec<Covariate>,
    pub bootstrap: BootstrapOptions,
    pub common_support: bool,
}

impl Default for AttSettings {
    fn default() -> Self {
        AttSettings {
            covariates: default_covariates(),
            outcomes: vec![Variable::Co2],
            periods: vec![Period::PhaseI, Period::PhaseII],
            k_values: vec![1, 20],
            with_replacement: true,
            ols: true,
            ols_covariates: Vec::new(),
            bootstrap: BootstrapOptions::default(),
            common_support: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttResults {
    pub stage: PropensityStage,
    pub weights: BTreeMap<usize, MatchWeights>,
    /// Ordered by outcome, period, then estimator (NN by k, then OLS).
    pub estimates: Vec<AttEstimate>,
}

/// Propensity stage on base-year covariates, then NN matching per k and
/// the DD estimators for every outcome and period.
pub fn estimate_att(panel: &Panel, settings: &AttSettings) -> Result<AttResults> {
    let base = panel.windows().base_year;
    let stage = propensity_stage(panel, &settings.covariates, &[base], settings.common_support)?;
    let mut weights = BTreeMap::new();
    for &k in &settings.k_values {
        weights.insert(k, nn_match(&stage.units, k, settings.with_replacement)?);
    }
    let ols_set: Option<CovariateSet> = if settings.ols && !settings.ols_covariates.is_empty() {
        Some(build_covariates(panel, &settings.ols_covariates, &[base], false)?.set)
    } else {
        None
    };
    let mut estimates = Vec::new();
    for outcome in &settings.outcomes {
        for &period in &settings.periods {
            let changes = unit_changes(panel, outcome, period)?;
            for (&k, w) in &weights {
                let mut est = att_from_changes(w, &changes, outcome.to_string(), period, &settings.bootstrap)?;
                est.estimator = Estimator::NearestNeighbor { k };
                estimates.push(est);
            }
            if settings.ols {
                let (est, _) =
                    reweighted_from_changes(&stage.units, &changes, ols_set.as_ref(), outcome.to_string(), period)?;
                estimates.push(est);
            }
        }
    }
    Ok(AttResults {
        stage,
        weights,
        estimates,
    })
}

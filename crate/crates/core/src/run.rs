//! Pipeline stages driven by a [`RunConfig`], producing named text
//! artifacts. Writing them to disk is left to the caller.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{DgpKind, McTarget, RunConfig};
use crate::error::{Error, Result};
use crate::frontier::{efficiency_distance, fit_all_industries, FrontierModel};
use crate::matching::MatchWeights;
use crate::montecarlo::{monte_carlo, McPipeline, McReport};
use crate::panel::{
    indexed_median_series, ingest_panel, mid_fraction_band, summary_stats, write_panel_csv, Panel, Variable,
};
use crate::pipeline::{estimate_att, AttResults};
use crate::propensity::BalanceReport;
use crate::report::{
    att_table_csv, att_table_text, emit_series, frontier_table_csv, frontier_table_text, satt_table_text, Series,
};
use crate::satt::{build_distance_panel, median_distance_series, satt, DistancePanel, Group, SattReport};
use crate::synthgen::{generate_did_panel, generate_sfa_panel, TruthRecord};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Share of observations kept by the trimmed descriptive statistics.
pub const SUMMARY_TRIM: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    IngestCheck,
    Propensity,
    Match,
    Att,
    Frontier,
    Satt,
    Report,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub content: String,
}

impl Artifact {
    fn new(name: impl Into<String>, content: String) -> Self {
        Artifact {
            name: name.into(),
            content,
        }
    }
}

/// First line of every output file.
pub fn header(config: &RunConfig) -> String {
    format!(
        "# ets-causal {TOOL_VERSION} config={} seed={}\n",
        config.hash(),
        config.seed_or_default()
    )
}

/// Writes each artifact to `dir`, prefixed with `header`.
pub fn write_artifacts(dir: &Path, header: &str, artifacts: &[Artifact]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for a in artifacts {
        fs::write(dir.join(&a.name), format!("{header}{}", a.content))?;
    }
    Ok(())
}

/// The analysis panel: ingested from `input` (relative to `base_dir`) or
/// generated from `[dgp]` with the run seed.
pub fn load_panel(config: &RunConfig, base_dir: &Path) -> Result<(Panel, Option<TruthRecord>)> {
    let (panel, truth) = match (&config.input, &config.dgp) {
        (Some(path), None) => {
            let file = fs::File::open(base_dir.join(path))?;
            (ingest_panel(file, config.fuel_factors.as_ref())?, None)
        }
        (None, Some(dgp)) => {
            let dgp_config = dgp.config()?;
            let seed = config.seed_or_default();
            let (panel, truth) = match dgp.kind {
                DgpKind::Did => generate_did_panel(&dgp_config, seed)?,
                DgpKind::Sfa => generate_sfa_panel(&dgp_config, seed)?,
            };
            (panel, Some(truth))
        }
        _ => return Err(Error::Config("one of `input` or `[dgp]` is required".into())),
    };
    let panel = match &config.windows {
        Some(w) => panel.with_windows(w.clone())?,
        None => panel,
    };
    Ok((panel, truth))
}

/// Runs one stage and returns its artifacts in a fixed order.
pub fn execute(config: &RunConfig, base_dir: &Path, stage: Stage) -> Result<Vec<Artifact>> {
    config.validate()?;
    if stage == Stage::MonteCarlo {
        return Ok(vec![Artifact::new("mc.csv", run_monte_carlo(config)?.to_csv())]);
    }
    let (panel, truth) = load_panel(config, base_dir)?;
    let mut out = Vec::new();
    match stage {
        Stage::Simulate => {
            let mut csv = Vec::new();
            write_panel_csv(&panel, &mut csv)?;
            out.push(Artifact::new("panel.csv", String::from_utf8(csv).expect("utf-8 panel")));
            if let Some(t) = &truth {
                out.extend(truth_artifacts(t, &panel));
            }
        }
        Stage::IngestCheck => out.extend(summary_artifacts(&panel)?),
        Stage::Propensity => {
            let res = estimate_att(&panel, &config.att_settings()?)?;
            out.extend(propensity_artifacts(config, &panel, &res)?);
        }
        Stage::Match => {
            let res = estimate_att(&panel, &config.att_settings()?)?;
            out.extend(match_artifacts(&res.weights));
        }
        Stage::Att => {
            let res = estimate_att(&panel, &config.att_settings()?)?;
            out.extend(att_artifacts(config, &res));
        }
        Stage::Frontier => {
            let models = fit_all_industries(&panel, &config.frontier_options())?;
            out.extend(frontier_artifacts(&panel, &models)?);
        }
        Stage::Satt => {
            let models = fit_all_industries(&panel, &config.frontier_options())?;
            out.extend(satt_artifacts(config, &panel, &models)?);
        }
        Stage::Report => {
            out.extend(summary_artifacts(&panel)?);
            let res = estimate_att(&panel, &config.att_settings()?)?;
            out.extend(propensity_artifacts(config, &panel, &res)?);
            out.extend(match_artifacts(&res.weights));
            out.extend(att_artifacts(config, &res));
            out.push(Artifact::new("indexed_medians.csv", indexed_series(config, &panel)?));
            let models = fit_all_industries(&panel, &config.frontier_options())?;
            out.extend(frontier_artifacts(&panel, &models)?);
            out.extend(satt_artifacts(config, &panel, &models)?);
        }
        Stage::MonteCarlo => unreachable!("handled above"),
    }
    Ok(out)
}

fn truth_artifacts(truth: &TruthRecord, panel: &Panel) -> Vec<Artifact> {
    let mut firms = String::from("firm_id,treated,propensity\n");
    for f in panel.firms() {
        let p = truth.propensity.get(&f.firm_id).copied().unwrap_or(f64::NAN);
        let _ = writeln!(firms, "{},{},{}", f.firm_id, u8::from(f.ets), p);
    }
    let mut effects = String::from("outcome,phase,true_value\n");
    for ((outcome, period), v) in &truth.true_att {
        let _ = writeln!(effects, "{outcome},{period},{v}");
    }
    vec![
        Artifact::new("truth_firms.csv", firms),
        Artifact::new("truth_effects.csv", effects),
    ]
}

fn summary_variables(panel: &Panel) -> Vec<Variable> {
    let mut vars = vec![
        Variable::Output,
        Variable::Employees,
        Variable::Exports,
        Variable::Wage,
        Variable::Capital,
        Variable::Electricity,
    ];
    vars.extend(panel.fuel_columns().iter().map(|f| Variable::Fuel(f.clone())));
    vars.extend([Variable::Co2, Variable::Co2Intensity, Variable::ExportShare]);
    vars
}

/// Base-year descriptive statistics by group, each computed on the middle
/// 98% of that group's values.
fn summary_artifacts(panel: &Panel) -> Result<Vec<Artifact>> {
    let year = panel.windows().base_year;
    let firms = panel.firms();
    let n_treated = firms.iter().filter(|f| f.ets).count();
    let mut text = format!(
        "records {}  firms {}  treated {}  controls {}  years {:?}\nbase year {year}, middle {}% of values\n\n",
        panel.len(),
        firms.len(),
        n_treated,
        firms.len() - n_treated,
        panel.years(),
        SUMMARY_TRIM * 100.0
    );
    let _ = writeln!(
        text,
        "{:<16} {:<8} {:>6} {:>14} {:>14} {:>14}",
        "variable", "group", "n", "mean", "sd", "median"
    );
    let mut csv = String::from("variable,group,n,mean,sd,p10,median,p90\n");
    for var in summary_variables(panel) {
        for (group, treated) in [("treated", true), ("control", false)] {
            let values: Vec<f64> = panel
                .records()
                .iter()
                .filter(|r| r.year == year && r.ets == treated)
                .filter_map(|r| r.value(&var))
                .collect();
            if values.is_empty() {
                continue;
            }
            let band = mid_fraction_band(&values, SUMMARY_TRIM)?;
            let kept: Vec<f64> = band.retain(&values).into_iter().map(|i| values[i]).collect();
            let s = summary_stats(&kept)?;
            let _ = writeln!(
                text,
                "{:<16} {:<8} {:>6} {:>14.3} {:>14.3} {:>14.3}",
                var.to_string(),
                group,
                s.n,
                s.mean,
                s.sd,
                s.p50
            );
            let _ = writeln!(
                csv,
                "{var},{group},{},{},{},{},{},{}",
                s.n, s.mean, s.sd, s.p10, s.p50, s.p90
            );
        }
    }
    Ok(vec![
        Artifact::new("summary.txt", text),
        Artifact::new("summary.csv", csv),
    ])
}

fn propensity_artifacts(config: &RunConfig, panel: &Panel, res: &AttResults) -> Result<Vec<Artifact>> {
    let stage = &res.stage;
    let se = stage.model.standard_errors();
    let mut coef = String::from("term,coefficient,se\n");
    for (j, name) in stage.model.names.iter().enumerate() {
        let _ = writeln!(coef, "{name},{},{}", stage.model.coefficients[j], se[j]);
    }
    let retained: std::collections::BTreeSet<usize> = stage.support.retained.iter().copied().collect();
    let mut scores = String::from("firm_id,treated,score,on_support\n");
    for (i, id) in stage.data.set.unit_ids().iter().enumerate() {
        let _ = writeln!(
            scores,
            "{id},{},{},{}",
            u8::from(stage.data.treated[i]),
            stage.scores[i],
            u8::from(retained.contains(&i))
        );
    }
    let mut out = vec![
        Artifact::new("propensity.csv", coef),
        Artifact::new("scores.csv", scores),
    ];
    if let Some((k, w)) = res.weights.iter().next() {
        let vars: Vec<Variable> = config.att.balance.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        let report = BalanceReport::compute(panel, w, &vars)?;
        let mut text = format!("Balance of matched samples, NN(1:{k})\n");
        text.push_str(&report.to_text());
        if let Some(warn) = &stage.support.warning {
            let _ = writeln!(text, "note: {warn}");
        }
        out.push(Artifact::new("balance.txt", text));
        out.push(Artifact::new("balance.csv", report.to_csv()));
    }
    Ok(out)
}

fn match_artifacts(weights: &BTreeMap<usize, MatchWeights>) -> Vec<Artifact> {
    weights
        .iter()
        .map(|(k, w)| Artifact::new(format!("matches_k{k}.csv"), w.to_csv()))
        .collect()
}

fn att_artifacts(config: &RunConfig, res: &AttResults) -> Vec<Artifact> {
    let stars = config.att.stars;
    vec![
        Artifact::new("att.txt", att_table_text(&res.estimates, stars)),
        Artifact::new("att.csv", att_table_csv(&res.estimates, stars)),
    ]
}

fn indexed_series(config: &RunConfig, panel: &Panel) -> Result<String> {
    let base = panel.windows().base_year;
    let mut series = Vec::new();
    for name in &config.series.variables {
        let var: Variable = name.parse()?;
        for (group, treated) in [("treated", true), ("control", false)] {
            let sub = panel.filter(|r| r.ets == treated);
            series.push(Series {
                label: format!("indexed_median_{var}"),
                group: group.to_string(),
                values: indexed_median_series(&sub, &var, base)?,
            });
        }
    }
    Ok(emit_series(&series))
}

fn frontier_artifacts(panel: &Panel, models: &BTreeMap<u16, FrontierModel>) -> Result<Vec<Artifact>> {
    let mut distances = String::from("firm_id,year,industry,treated,distance\n");
    for model in models.values() {
        for s in efficiency_distance(model, panel)?.scores {
            let treated = panel.get(&s.firm_id, s.year).is_some_and(|r| r.ets);
            let _ = writeln!(
                distances,
                "{},{},{},{},{}",
                s.firm_id,
                s.year,
                model.industry,
                u8::from(treated),
                s.distance
            );
        }
    }
    Ok(vec![
        Artifact::new("frontier.txt", frontier_table_text(models)),
        Artifact::new("frontier.csv", frontier_table_csv(models)),
        Artifact::new("distances.csv", distances),
    ])
}

fn satt_artifacts(config: &RunConfig, panel: &Panel, models: &BTreeMap<u16, FrontierModel>) -> Result<Vec<Artifact>> {
    let dp = build_distance_panel(panel, models)?;
    let report = satt(&dp, &config.satt_settings()?)?;
    let stars = config.satt.stars;
    let mut text = satt_table_text(&report.effects, stars);
    let _ = writeln!(
        text,
        "Matched samples: {} treated, {} controls",
        report.n_treated, report.n_controls
    );
    for (k, period) in &report.missing {
        let _ = writeln!(text, "missing: k={k} {period} (no matched data)");
    }
    if !dp.floored.is_empty() {
        let _ = writeln!(text, "note: {} distances floored before logging", dp.floored.len());
    }
    Ok(vec![
        Artifact::new("satt.txt", text),
        Artifact::new("satt.csv", att_table_csv(&report.effects, stars)),
        Artifact::new("distance_medians.csv", distance_series(&dp)),
    ])
}

fn distance_series(dp: &DistancePanel) -> String {
    let mut series = Vec::new();
    let mut scopes: Vec<(String, Option<u16>)> = vec![("all".to_string(), None)];
    scopes.extend(
        dp.panel
            .industries()
            .into_iter()
            .map(|c| (format!("industry_{c}"), Some(c))),
    );
    for (label, industry) in scopes {
        for group in [Group::Treated, Group::Control] {
            series.push(Series {
                label: format!("median_distance_{label}"),
                group: group.to_string(),
                values: median_distance_series(dp, group, industry).values,
            });
        }
    }
    emit_series(&series)
}

pub fn run_monte_carlo(config: &RunConfig) -> Result<McReport> {
    let dgp = config
        .dgp
        .as_ref()
        .ok_or_else(|| Error::Config("Monte Carlo runs need a `[dgp]` block".into()))?;
    let dgp_config = dgp.config()?;
    let pipeline = match config.mc.target {
        McTarget::Att => McPipeline::Att(config.att_settings()?),
        McTarget::Satt => McPipeline::Satt {
            settings: config.satt_settings()?,
            frontier: config.frontier_options(),
        },
    };
    monte_carlo(&dgp_config, &pipeline, config.mc.reps, config.seed_or_default())
}

/// SATT results for callers that want the structured report.
pub fn run_satt(config: &RunConfig, panel: &Panel) -> Result<(BTreeMap<u16, FrontierModel>, SattReport)> {
    let models = fit_all_industries(panel, &config.frontier_options())?;
    let dp = build_distance_panel(panel, &models)?;
    Ok((models, satt(&dp, &config.satt_settings()?)?))
}

//! Text and CSV renderings of estimation results.
//!
//! Text tables round estimates (ATT 3 decimals, SATT 4, frontier 3) and put
//! standard errors in parentheses; CSV files carry full precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::frontier::FrontierModel;
use crate::matching::{AttEstimate, Estimator};
use crate::panel::Period;

pub const ATT_DECIMALS: usize = 3;
pub const SATT_DECIMALS: usize = 4;
pub const FRONTIER_DECIMALS: usize = 3;

/// Significance star convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stars {
    /// `***` below 1%, `**` below 5%, `*` below 10%.
    #[default]
    ThreeTier,
    /// `*` below 5%.
    SingleFive,
}

impl Stars {
    pub fn mark(self, p: Option<f64>) -> &'static str {
        let Some(p) = p else { return "" };
        match self {
            Stars::ThreeTier if p < 0.01 => "***",
            Stars::ThreeTier if p < 0.05 => "**",
            Stars::ThreeTier if p < 0.10 => "*",
            Stars::SingleFive if p < 0.05 => "*",
            _ => "",
        }
    }
}

fn cell(e: &AttEstimate, stars: Stars, decimals: usize) -> String {
    let mut s = format!("{:.*}{}", decimals, e.estimate, stars.mark(e.p_value));
    if let Some(se) = e.se {
        let _ = write!(s, " ({se:.decimals$})");
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Estimator columns in display order: NN by ascending k, then OLS.
fn estimator_columns(estimates: &[AttEstimate]) -> Vec<Estimator> {
    let mut cols: Vec<Estimator> = estimates.iter().map(|e| e.estimator).collect();
    cols.sort();
    cols.dedup();
    cols
}

/// Rows in first-seen order of (outcome, period).
fn row_keys(estimates: &[AttEstimate]) -> Vec<(String, Period)> {
    let mut keys: Vec<(String, Period)> = Vec::new();
    for e in estimates {
        let k = (e.outcome.clone(), e.period);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.get(j))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Outcome-by-phase table with one column per estimator and the treated
/// and control counts of the first estimator in the row.
pub fn att_table_text(estimates: &[AttEstimate], stars: Stars) -> String {
    let cols = estimator_columns(estimates);
    let mut rows = vec![{
        let mut h = vec!["outcome".to_string(), "phase".to_string()];
        h.extend(cols.iter().map(ToString::to_string));
        h.push("n_treated".into());
        h.push("n_controls".into());
        h
    }];
    for (outcome, period) in row_keys(estimates) {
        let in_row: Vec<&AttEstimate> = estimates
            .iter()
            .filter(|e| e.outcome == outcome && e.period == period)
            .collect();
        let mut r = vec![outcome.clone(), period.to_string()];
        for c in &cols {
            r.push(
                in_row
                    .iter()
                    .find(|e| e.estimator == *c)
                    .map_or_else(|| "-".to_string(), |e| cell(e, stars, ATT_DECIMALS)),
            );
        }
        r.push(in_row[0].n_treated.to_string());
        r.push(in_row[0].n_controls.to_string());
        rows.push(r);
    }
    let mut out = pad_table(&rows);
    out.push_str(&star_note(stars));
    out
}

fn star_note(stars: Stars) -> String {
    match stars {
        Stars::ThreeTier => "Standard errors in parentheses. *** p<0.01, ** p<0.05, * p<0.1\n".into(),
        Stars::SingleFive => "Standard errors in parentheses. * p<0.05\n".into(),
    }
}

pub const ATT_CSV_HEADER: &str = "outcome,phase,estimator,estimate,se,p,stars,n_treated,n_controls";

/// Long format, one line per estimate.
pub fn att_table_csv(estimates: &[AttEstimate], stars: Stars) -> String {
    let mut out = format!("{ATT_CSV_HEADER}\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.outcome,
            e.period,
            e.estimator,
            e.estimate,
            opt(e.se),
            opt(e.p_value),
            stars.mark(e.p_value),
            e.n_treated,
            e.n_controls
        );
    }
    out
}

/// Years then phases as rows, one column per number of neighbours.
pub fn satt_table_text(estimates: &[AttEstimate], stars: Stars) -> String {
    let mut ks: Vec<usize> = estimates
        .iter()
        .filter_map(|e| match e.estimator {
            Estimator::NearestNeighbor { k } => Some(k),
            Estimator::ReweightedOls => None,
        })
        .collect();
    ks.sort_unstable();
    ks.dedup();
    let mut periods: Vec<Period> = estimates.iter().map(|e| e.period).collect();
    periods.sort_by_key(|p| match p {
        Period::Year(y) => (0, *y),
        Period::PhaseI => (1, 0),
        Period::PhaseII => (1, 1),
    });
    periods.dedup();
    let mut rows = vec![{
        let mut h = vec!["period".to_string()];
        h.extend(ks.iter().map(|k| format!("k={k}")));
        h
    }];
    for p in periods {
        let mut r = vec![p.to_string()];
        for &k in &ks {
            r.push(
                estimates
                    .iter()
                    .find(|e| e.period == p && e.estimator == Estimator::NearestNeighbor { k })
                    .map_or_else(|| "-".to_string(), |e| cell(e, stars, SATT_DECIMALS)),
            );
        }
        rows.push(r);
    }
    let mut out = pad_table(&rows);
    out.push_str(&star_note(stars));
    out
}

/// Labels in `FrontierModel::std_errors` order.
const PARAM_LABELS: [&str; 7] = ["constant", "capital", "labour", "energy", "sigma_u", "mu_v", "sigma_v"];

fn frontier_values(m: &FrontierModel) -> [f64; 7] {
    let p = &m.params;
    [
        p.constant,
        p.elasticities[0],
        p.elasticities[1],
        p.elasticities[2],
        p.sigma_u,
        p.mu_v,
        p.sigma_v,
    ]
}

/// One row per industry: elasticities, constant and the error parameters,
/// standard errors in parentheses, returns to scale last.
pub fn frontier_table_text(models: &BTreeMap<u16, FrontierModel>) -> String {
    let order = [1, 2, 3, 0, 4, 5, 6];
    let mut rows = vec![{
        let mut h = vec!["industry".to_string(), "n".to_string()];
        h.extend(order.iter().map(|&j| PARAM_LABELS[j].to_string()));
        h.push("rts".into());
        h
    }];
    for m in models.values() {
        let vals = frontier_values(m);
        let mut r = vec![
            format!("{}{}", m.industry, if m.boundary { " (boundary)" } else { "" }),
            m.n_obs.to_string(),
        ];
        for &j in &order {
            let mut c = format!("{:.*}", FRONTIER_DECIMALS, vals[j]);
            if let Some(se) = m.std_errors[j] {
                let _ = write!(c, " ({se:.FRONTIER_DECIMALS$})");
            }
            r.push(c);
        }
        r.push(format!("{:.*}", FRONTIER_DECIMALS, m.returns_to_scale()));
        rows.push(r);
    }
    pad_table(&rows)
}

pub const FRONTIER_CSV_HEADER: &str = "industry,n,capital,se_capital,labour,se_labour,energy,se_energy,constant,se_constant,sigma_u,se_sigma_u,mu_v,se_mu_v,sigma_v,se_sigma_v,returns_to_scale,log_likelihood,converged,boundary";

pub fn frontier_table_csv(models: &BTreeMap<u16, FrontierModel>) -> String {
    let order = [1, 2, 3, 0, 4, 5, 6];
    let mut out = format!("{FRONTIER_CSV_HEADER}\n");
    for m in models.values() {
        let vals = frontier_values(m);
        let _ = write!(out, "{},{}", m.industry, m.n_obs);
        for &j in &order {
            let _ = write!(out, ",{},{}", vals[j], opt(m.std_errors[j]));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            m.returns_to_scale(),
            m.log_likelihood,
            m.converged,
            m.boundary
        );
    }
    out
}

/// One plot-ready series: a label, a group and its year values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub group: String,
    pub values: BTreeMap<i32, f64>,
}

pub const SERIES_CSV_HEADER: &str = "series_label,group,year,value";

/// Long-format CSV, series in the given order and years ascending.
pub fn emit_series(series: &[Series]) -> String {
    let mut out = format!("{SERIES_CSV_HEADER}\n");
    for s in series {
        for (year, value) in &s.values {
            let _ = writeln!(out, "{},{},{},{}", s.label, s.group, year, value);
        }
    }
    out
}

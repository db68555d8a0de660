//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod nn;
pub mod probit;
pub mod sfa;

use std::collections::BTreeMap;

use ets_causal::matching::ScoredUnit;
use ets_causal::panel::{FirmYearRecord, Panel, PhaseWindows, BASE_FUELS};

/// Firm-year with every quantity set to `value` (CO2 too).
pub fn record(firm_id: &str, year: i32, ets: bool, value: f64) -> FirmYearRecord {
    FirmYearRecord {
        firm_id: firm_id.to_string(),
        year,
        industry: 17,
        ets,
        output: Some(value),
        employees: Some(value),
        exports: Some(value),
        wage: Some(value),
        capital: Some(value),
        electricity: Some(value),
        fuels: BASE_FUELS.iter().map(|f| (f.to_string(), Some(value))).collect(),
        co2: Some(value),
        extra: BTreeMap::new(),
    }
}

pub fn fuel_columns() -> Vec<String> {
    BASE_FUELS.iter().map(|s| s.to_string()).collect()
}

pub fn panel(records: Vec<FirmYearRecord>) -> Panel {
    Panel::new(records, fuel_columns(), PhaseWindows::default()).expect("valid fixture panel")
}

/// Panel over 2002-2010 where firm `id` has outcome `exp(path(year))`.
pub fn panel_from_paths(firms: &[(&str, bool, &dyn Fn(i32) -> f64)]) -> Panel {
    let mut recs = Vec::new();
    for (id, ets, path) in firms {
        for year in 2002..=2010 {
            recs.push(record(id, year, *ets, path(year).exp()));
        }
    }
    panel(recs)
}

pub fn unit(id: &str, score: f64, treated: bool) -> ScoredUnit {
    ScoredUnit {
        firm_id: id.to_string(),
        score,
        treated,
    }
}

/// Firm ids that sort in index order.
pub fn id(i: usize) -> String {
    format!("U{i:05}")
}

/// One-sample Kolmogorov-Smirnov test of `values` against the uniform law on
/// [0, 1]; returns the asymptotic p-value.
pub fn ks_uniform_p(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let lo = x - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - x;
            lo.max(hi)
        })
        .fold(0.0f64, f64::max);
    // Kolmogorov distribution with the Stephens small-sample correction.
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let j = f64::from(j);
        p += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * t * t).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Simpson's rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

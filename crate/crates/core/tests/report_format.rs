//! Table and series rendering.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ets_causal::matching::{AttEstimate, Estimator};
use ets_causal::panel::{indexed_median_series, Period, Variable};
use ets_causal::report::{
    att_table_csv, att_table_text, emit_series, satt_table_text, Series, Stars, ATT_CSV_HEADER, SERIES_CSV_HEADER,
};

fn est(
    outcome: &str,
    period: Period,
    estimator: Estimator,
    estimate: f64,
    se: Option<f64>,
    p: Option<f64>,
) -> AttEstimate {
    AttEstimate {
        outcome: outcome.into(),
        period,
        estimator,
        estimate,
        se,
        p_value: p,
        n_treated: 48,
        n_controls: 4870,
        dropped_treated: Vec::new(),
    }
}

fn fixture() -> Vec<AttEstimate> {
    let nn1 = Estimator::NearestNeighbor { k: 1 };
    let nn20 = Estimator::NearestNeighbor { k: 20 };
    let ols = Estimator::ReweightedOls;
    vec![
        est("co2", Period::PhaseI, nn1, -0.0412, Some(0.0651), Some(0.527)),
        est("co2", Period::PhaseI, nn20, -0.0304, Some(0.0502), Some(0.545)),
        est("co2", Period::PhaseI, ols, -0.0333, Some(0.0477), Some(0.485)),
        est("co2", Period::PhaseII, nn1, -0.2916, Some(0.0903), Some(0.0012)),
        est("co2", Period::PhaseII, nn20, -0.2740, Some(0.1301), Some(0.035)),
        est("co2", Period::PhaseII, ols, -0.2788, Some(0.1608), Some(0.083)),
        est("output", Period::PhaseII, nn1, 0.0123, None, None),
    ]
}

fn golden(name: &str, actual: &str) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "rerun with UPDATE_GOLDEN=1 to accept the new {name}");
}

#[test]
fn att_table_matches_golden() {
    golden("att_table.txt", &att_table_text(&fixture(), Stars::ThreeTier));
    golden("att_table.csv", &att_table_csv(&fixture(), Stars::ThreeTier));
}

#[test]
fn satt_table_matches_golden() {
    let mut rows = Vec::new();
    for (i, period) in [Period::Year(2005), Period::Year(2006), Period::PhaseI]
        .into_iter()
        .enumerate()
    {
        for k in [1, 5] {
            let e = -0.02 - 0.001 * i as f64 - 0.0005 * k as f64;
            rows.push(est(
                "log_distance",
                period,
                Estimator::NearestNeighbor { k },
                e,
                Some(0.011),
                Some(0.04 + 0.01 * i as f64),
            ));
        }
    }
    golden("satt_table.txt", &satt_table_text(&rows, Stars::SingleFive));
}

#[test]
fn empty_input_gives_the_header_alone() {
    assert_eq!(att_table_csv(&[], Stars::ThreeTier), format!("{ATT_CSV_HEADER}\n"));
    assert_eq!(emit_series(&[]), format!("{SERIES_CSV_HEADER}\n"));
}

#[test]
fn star_thresholds() {
    assert_eq!(Stars::ThreeTier.mark(Some(0.004)), "***");
    assert_eq!(Stars::ThreeTier.mark(Some(0.03)), "**");
    assert_eq!(Stars::ThreeTier.mark(Some(0.07)), "*");
    assert_eq!(Stars::ThreeTier.mark(Some(0.2)), "");
    assert_eq!(Stars::SingleFive.mark(Some(0.004)), "*");
    assert_eq!(Stars::SingleFive.mark(Some(0.03)), "*");
    assert_eq!(Stars::SingleFive.mark(Some(0.07)), "");
    assert_eq!(Stars::ThreeTier.mark(None), "");
}

#[test]
fn csv_keeps_full_precision() {
    let csv = att_table_csv(&fixture(), Stars::ThreeTier);
    let line = csv.lines().nth(4).unwrap();
    assert_eq!(line, "co2,Phase II,NN(1:1),-0.2916,0.0903,0.0012,***,48,4870");
    let missing = csv.lines().last().unwrap();
    assert!(missing.contains(",0.0123,,,,"), "{missing}");
}

#[test]
fn series_rows_follow_the_median_index() {
    let mut recs = Vec::new();
    for (i, base) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        for (j, year) in [2003, 2004, 2005].into_iter().enumerate() {
            recs.push(common::record(
                &common::id(i),
                year,
                false,
                base * (1.0 + 0.1 * j as f64),
            ));
        }
    }
    let p = common::panel(recs);
    let values = indexed_median_series(&p, &Variable::Output, 2003).unwrap();
    let text = emit_series(&[Series {
        label: "output".into(),
        group: "control".into(),
        values: values.clone(),
    }]);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, (year, v)) in rows.iter().zip(&values) {
        assert_eq!(*row, format!("output,control,{year},{v}"));
    }
    assert_eq!(values[&2003], 1.0);
    assert!((values[&2005] - 1.2).abs() < 1e-12);
    assert_eq!(
        emit_series(&[Series {
            label: "x".into(),
            group: "g".into(),
            values: BTreeMap::new()
        }])
        .lines()
        .count(),
        1
    );
}

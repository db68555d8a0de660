//! Firm-year panel data model, CSV ingestion, and descriptive statistics.
//!
//! The CSV schema (`ets-causal-v1`) is
//!
//! ```text
//! firm_id,year,industry,ets,output,employees,exports,wage,capital,electricity,gas_mwh,oil_mwh,other_fuel_mwh,co2
//! ```
//!
//! Units: output and exports and capital in EUR 1000, wage in EUR per
//! employee-year, energy in MWh, co2 in tonnes. An empty field is a missing
//! value. Further fuel columns are allowed if they end in `_mwh`; the `co2`
//! column may be omitted, in which case emissions are computed from a
//! [`FuelFactorTable`] when one is supplied. Lines starting with `#` before
//! the header are comments; a `# schema: <version>` comment must name
//! `ets-causal-v1`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub type FirmId = String;

pub const SCHEMA_VERSION: &str = "ets-causal-v1";

/// Fuel columns every file carries, in header order.
pub const BASE_FUELS: [&str; 3] = ["gas", "oil", "other_fuel"];

const BASE_COLUMNS: [&str; 10] = [
    "firm_id",
    "year",
    "industry",
    "ets",
    "output",
    "employees",
    "exports",
    "wage",
    "capital",
    "electricity",
];

/// Grams per tonne; intensity is reported in g CO2 per EUR 1000 of output.
const GRAMS_PER_TONNE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct FirmYearRecord {
    pub firm_id: FirmId,
    pub year: i32,
    pub industry: u16,
    pub ets: bool,
    pub output: Option<f64>,
    pub employees: Option<f64>,
    pub exports: Option<f64>,
    pub wage: Option<f64>,
    pub capital: Option<f64>,
    pub electricity: Option<f64>,
    /// Fuel name (column name without `_mwh`) to MWh. Every fuel column of
    /// the panel has an entry; `None` is a missing cell.
    pub fuels: BTreeMap<String, Option<f64>>,
    pub co2: Option<f64>,
    /// Derived per-observation variables, e.g. frontier distances.
    pub extra: BTreeMap<String, f64>,
}

impl FirmYearRecord {
    /// g CO2 per EUR 1000 of gross output.
    pub fn co2_intensity(&self) -> Option<f64> {
        match (self.co2, self.output) {
            (Some(c), Some(y)) if y > 0.0 => Some(c * GRAMS_PER_TONNE / y),
            _ => None,
        }
    }

    /// Electricity plus all fuels, MWh. Missing if any component is missing.
    pub fn energy_use(&self) -> Option<f64> {
        let mut total = self.electricity?;
        for v in self.fuels.values() {
            total += (*v)?;
        }
        Some(total)
    }

    pub fn export_share(&self) -> Option<f64> {
        match (self.exports, self.output) {
            (Some(x), Some(y)) if y > 0.0 => Some(x / y),
            _ => None,
        }
    }

    pub fn present_fuels(&self) -> Option<BTreeMap<String, f64>> {
        self.fuels.iter().map(|(k, v)| v.map(|v| (k.clone(), v))).collect()
    }

    pub fn value(&self, var: &Variable) -> Option<f64> {
        match var {
            Variable::Output => self.output,
            Variable::Employees => self.employees,
            Variable::Exports => self.exports,
            Variable::Wage => self.wage,
            Variable::Capital => self.capital,
            Variable::Electricity => self.electricity,
            Variable::Fuel(name) => self.fuels.get(name).copied().flatten(),
            Variable::Co2 => self.co2,
            Variable::Co2Intensity => self.co2_intensity(),
            Variable::EnergyUse => self.energy_use(),
            Variable::ExportShare => self.export_share(),
            Variable::Extra(name) => self.extra.get(name).copied(),
        }
    }

    fn check_nonnegative(&self) -> Result<()> {
        let quantities = [
            ("output", self.output),
            ("employees", self.employees),
            ("exports", self.exports),
            ("wage", self.wage),
            ("capital", self.capital),
            ("electricity", self.electricity),
            ("co2", self.co2),
        ];
        let fuels = self.fuels.iter().map(|(k, v)| (k.as_str(), *v));
        for (name, v) in quantities.into_iter().chain(fuels) {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "firm `{}` year {}: `{name}` must be finite and nonnegative, got {v}",
                        self.firm_id, self.year
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A named panel variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    Output,
    Employees,
    Exports,
    Wage,
    Capital,
    Electricity,
    Fuel(String),
    Co2,
    Co2Intensity,
    EnergyUse,
    ExportShare,
    Extra(String),
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "output" => Variable::Output,
            "employees" => Variable::Employees,
            "exports" => Variable::Exports,
            "wage" => Variable::Wage,
            "capital" => Variable::Capital,
            "electricity" => Variable::Electricity,
            "co2" => Variable::Co2,
            "co2_intensity" => Variable::Co2Intensity,
            "energy" => Variable::EnergyUse,
            "export_share" => Variable::ExportShare,
            "" => return Err(Error::InvalidArgument("empty variable name".into())),
            other => match other.strip_suffix("_mwh") {
                Some(fuel) if !fuel.is_empty() => Variable::Fuel(fuel.to_string()),
                _ => Variable::Extra(other.to_string()),
            },
        })
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::Output => f.write_str("output"),
            Variable::Employees => f.write_str("employees"),
            Variable::Exports => f.write_str("exports"),
            Variable::Wage => f.write_str("wage"),
            Variable::Capital => f.write_str("capital"),
            Variable::Electricity => f.write_str("electricity"),
            Variable::Fuel(name) => write!(f, "{name}_mwh"),
            Variable::Co2 => f.write_str("co2"),
            Variable::Co2Intensity => f.write_str("co2_intensity"),
            Variable::EnergyUse => f.write_str("energy"),
            Variable::ExportShare => f.write_str("export_share"),
            Variable::Extra(name) => f.write_str(name),
        }
    }
}

/// Pre-treatment and trading-phase year windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseWindows {
    pub pretreatment_years: Vec<i32>,
    pub phase1_years: Vec<i32>,
    pub phase2_years: Vec<i32>,
    pub base_year: i32,
}

impl Default for PhaseWindows {
    fn default() -> Self {
        PhaseWindows {
            pretreatment_years: vec![2002, 2003],
            phase1_years: vec![2005, 2006, 2007],
            phase2_years: vec![2008, 2009, 2010],
            base_year: 2003,
        }
    }
}

impl PhaseWindows {
    pub fn validate(&self) -> Result<()> {
        let windows = [&self.pretreatment_years, &self.phase1_years, &self.phase2_years];
        for (i, a) in windows.iter().enumerate() {
            for b in &windows[i + 1..] {
                if let Some(y) = a.iter().find(|y| b.contains(y)) {
                    return Err(Error::InvalidArgument(format!("phase windows overlap in year {y}")));
                }
            }
        }
        if !self.pretreatment_years.contains(&self.base_year) {
            return Err(Error::InvalidArgument(format!(
                "base year {} is not a pretreatment year",
                self.base_year
            )));
        }
        Ok(())
    }

    /// Years covered by a period label.
    pub fn years(&self, period: Period) -> Vec<i32> {
        match period {
            Period::PhaseI => self.phase1_years.clone(),
            Period::PhaseII => self.phase2_years.clone(),
            Period::Year(y) => vec![y],
        }
    }

    /// First treatment year; everything strictly earlier is pre-treatment.
    pub fn treatment_start(&self) -> i32 {
        self.phase1_years
            .iter()
            .chain(&self.phase2_years)
            .copied()
            .min()
            .unwrap_or(i32::MAX)
    }
}

/// Post-treatment period an effect refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Period {
    PhaseI,
    PhaseII,
    Year(i32),
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::PhaseI => f.write_str("Phase I"),
            Period::PhaseII => f.write_str("Phase II"),
            Period::Year(y) => write!(f, "{y}"),
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Phase I" | "phase1" | "phase_1" => Ok(Period::PhaseI),
            "Phase II" | "phase2" | "phase_2" => Ok(Period::PhaseII),
            other => other
                .parse()
                .map(Period::Year)
                .map_err(|_| Error::InvalidArgument(format!("unknown period `{other}`"))),
        }
    }
}

/// Emission factors, t CO2 per MWh, keyed by fuel name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FuelFactorTable(BTreeMap<String, f64>);

impl FuelFactorTable {
    pub fn new<I, S>(factors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let table = FuelFactorTable(factors.into_iter().map(|(k, v)| (k.into(), v)).collect());
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            Some((k, v)) => Err(Error::InvalidArgument(format!(
                "emission factor for `{k}` must be nonnegative, got {v}"
            ))),
            None => Ok(()),
        }
    }

    pub fn get(&self, fuel: &str) -> Option<f64> {
        self.0.get(fuel).copied()
    }
}

/// Tonnes of CO2 from fuel use: `sum_f use_f * factor_f`.
pub fn compute_emissions(fuels: &BTreeMap<String, f64>, factors: &FuelFactorTable) -> Result<f64> {
    fuels.iter().try_fold(0.0, |acc, (fuel, mwh)| {
        let factor = factors.get(fuel).ok_or_else(|| Error::MissingFactor(fuel.clone()))?;
        Ok(acc + mwh * factor)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmInfo {
    pub firm_id: FirmId,
    pub industry: u16,
    pub ets: bool,
}

/// An unbalanced firm-year panel. Records are kept sorted by
/// `(firm_id, year)`, so construction is insensitive to input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    records: Vec<FirmYearRecord>,
    fuel_columns: Vec<String>,
    windows: PhaseWindows,
    firm_ranges: BTreeMap<FirmId, Range<usize>>,
}

impl Panel {
    /// Builds a panel, enforcing one record per firm-year, a firm-level
    /// treatment flag and nonnegative quantities.
    pub fn new(mut records: Vec<FirmYearRecord>, fuel_columns: Vec<String>, windows: PhaseWindows) -> Result<Self> {
        windows.validate()?;
        records.sort_by(|a, b| (&a.firm_id, a.year).cmp(&(&b.firm_id, b.year)));
        let mut firm_ranges: BTreeMap<FirmId, Range<usize>> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            rec.check_nonnegative()?;
            if rec.fuels.len() != fuel_columns.len() || !fuel_columns.iter().all(|f| rec.fuels.contains_key(f)) {
                return Err(Error::InvalidArgument(format!(
                    "firm `{}` year {}: fuel entries do not match panel fuel columns",
                    rec.firm_id, rec.year
                )));
            }
            if i > 0 {
                let prev = &records[i - 1];
                if prev.firm_id == rec.firm_id {
                    if prev.year == rec.year {
                        return Err(Error::DuplicateRecord {
                            firm_id: rec.firm_id.clone(),
                            year: rec.year,
                        });
                    }
                    if prev.ets != rec.ets {
                        return Err(Error::InconsistentTreatment {
                            firm_id: rec.firm_id.clone(),
                        });
                    }
                }
            }
            firm_ranges
                .entry(rec.firm_id.clone())
                .and_modify(|r| r.end = i + 1)
                .or_insert(i..i + 1);
        }
        Ok(Panel {
            records,
            fuel_columns,
            windows,
            firm_ranges,
        })
    }

    pub fn records(&self) -> &[FirmYearRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn fuel_columns(&self) -> &[String] {
        &self.fuel_columns
    }

    pub fn windows(&self) -> &PhaseWindows {
        &self.windows
    }

    pub fn with_windows(mut self, windows: PhaseWindows) -> Result<Self> {
        windows.validate()?;
        self.windows = windows;
        Ok(self)
    }

    pub fn firm_records(&self, firm_id: &str) -> &[FirmYearRecord] {
        match self.firm_ranges.get(firm_id) {
            Some(r) => &self.records[r.clone()],
            None => &[],
        }
    }

    pub fn get(&self, firm_id: &str, year: i32) -> Option<&FirmYearRecord> {
        let recs = self.firm_records(firm_id);
        recs.binary_search_by_key(&year, |r| r.year).ok().map(|i| &recs[i])
    }

    pub fn value(&self, firm_id: &str, year: i32, var: &Variable) -> Option<f64> {
        self.get(firm_id, year).and_then(|r| r.value(var))
    }

    /// One entry per firm, ascending by id. Industry is taken from the
    /// firm's earliest record.
    pub fn firms(&self) -> Vec<FirmInfo> {
        self.firm_ranges
            .iter()
            .map(|(id, r)| {
                let rec = &self.records[r.start];
                FirmInfo {
                    firm_id: id.clone(),
                    industry: rec.industry,
                    ets: rec.ets,
                }
            })
            .collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.records.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        years
    }

    pub fn industries(&self) -> Vec<u16> {
        let mut codes: Vec<u16> = self.records.iter().map(|r| r.industry).collect();
        codes.sort_unstable();
        codes.dedup();
        codes
    }

    /// Observed values of `var` in `year`.
    pub fn year_values(&self, var: &Variable, year: i32) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.year == year)
            .filter_map(|r| r.value(var))
            .collect()
    }

    /// Sub-panel of the records satisfying `keep`.
    pub fn filter<F: Fn(&FirmYearRecord) -> bool>(&self, keep: F) -> Panel {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Panel::new(records, self.fuel_columns.clone(), self.windows.clone()).expect("subset of a valid panel is valid")
    }

    /// Copy of the panel with a derived variable attached to the listed
    /// firm-years.
    pub fn with_extra(&self, name: &str, values: &BTreeMap<(FirmId, i32), f64>) -> Panel {
        let mut out = self.clone();
        for rec in &mut out.records {
            if let Some(v) = values.get(&(rec.firm_id.clone(), rec.year)) {
                rec.extra.insert(name.to_string(), *v);
            }
        }
        out
    }
}

fn fuel_column_order(mut fuels: Vec<String>) -> Vec<String> {
    fuels.sort_by_key(|f| {
        (
            BASE_FUELS.iter().position(|b| b == f).unwrap_or(BASE_FUELS.len()),
            f.clone(),
        )
    });
    fuels
}

fn parse_quantity(row: usize, column: &str, raw: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::Malformed {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::Malformed {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        });
    }
    if v < 0.0 {
        return Err(Error::NegativeQuantity {
            row,
            column: column.to_string(),
            value: v,
        });
    }
    Ok(Some(v))
}

fn parse_required<T: FromStr>(row: usize, column: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Malformed {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a panel in the `ets-causal-v1` CSV schema.
///
/// Row numbers in errors count data rows from 1. When the `co2` column is
/// absent and `factors` is given, emissions are computed per row from the
/// fuel columns (missing fuel cells give missing emissions).
pub fn ingest_panel<R: Read>(mut source: R, factors: Option<&FuelFactorTable>) -> Result<Panel> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            body_start += line.len();
            continue;
        }
        let Some(comment) = trimmed.strip_prefix('#') else {
            break;
        };
        if let Some(version) = comment.trim().strip_prefix("schema:") {
            if version.trim() != SCHEMA_VERSION {
                return Err(Error::Schema(format!(
                    "unsupported schema version `{}`",
                    version.trim()
                )));
            }
        }
        body_start += line.len();
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text[body_start..].as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::Schema("missing header row".into()));
    }

    let position = |name: &str| header.iter().position(|h| h == name);
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(Error::Schema(format!("duplicate column `{h}`")));
        }
        let known = BASE_COLUMNS.contains(&h.as_str()) || h == "co2" || h.ends_with("_mwh");
        if !known {
            return Err(Error::Schema(format!("unknown column `{h}`")));
        }
    }
    let mut base_idx = [0usize; BASE_COLUMNS.len()];
    for (slot, name) in base_idx.iter_mut().zip(BASE_COLUMNS) {
        *slot = position(name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
    }
    for fuel in BASE_FUELS {
        if position(&format!("{fuel}_mwh")).is_none() {
            return Err(Error::Schema(format!("missing column `{fuel}_mwh`")));
        }
    }
    let fuel_cols: Vec<(String, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_suffix("_mwh").map(|f| (f.to_string(), i)))
        .collect();
    let co2_idx = position("co2");
    if co2_idx.is_none() {
        if let Some(table) = factors {
            if let Some((fuel, _)) = fuel_cols.iter().find(|(f, _)| table.get(f).is_none()) {
                return Err(Error::MissingFactor(fuel.clone()));
            }
        }
    }

    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row_no = n + 1;
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let [id_i, year_i, ind_i, ets_i, out_i, emp_i, exp_i, wage_i, cap_i, el_i] = base_idx;
        let firm_id = field(id_i).trim().to_string();
        if firm_id.is_empty() {
            return Err(Error::Malformed {
                row: row_no,
                column: "firm_id".into(),
                value: String::new(),
            });
        }
        let ets = match field(ets_i).trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Malformed {
                    row: row_no,
                    column: "ets".into(),
                    value: other.to_string(),
                })
            }
        };
        let mut fuels = BTreeMap::new();
        for (fuel, i) in &fuel_cols {
            fuels.insert(fuel.clone(), parse_quantity(row_no, &header[*i], field(*i))?);
        }
        let co2 = match co2_idx {
            Some(i) => parse_quantity(row_no, "co2", field(i))?,
            None => match factors {
                Some(table) => {
                    let present: Option<BTreeMap<String, f64>> =
                        fuels.iter().map(|(k, v)| v.map(|v| (k.clone(), v))).collect();
                    present.map(|f| compute_emissions(&f, table)).transpose()?
                }
                None => None,
            },
        };
        records.push(FirmYearRecord {
            firm_id,
            year: parse_required(row_no, "year", field(year_i))?,
            industry: parse_required(row_no, "industry", field(ind_i))?,
            ets,
            output: parse_quantity(row_no, "output", field(out_i))?,
            employees: parse_quantity(row_no, "employees", field(emp_i))?,
            exports: parse_quantity(row_no, "exports", field(exp_i))?,
            wage: parse_quantity(row_no, "wage", field(wage_i))?,
            capital: parse_quantity(row_no, "capital", field(cap_i))?,
            electricity: parse_quantity(row_no, "electricity", field(el_i))?,
            fuels,
            co2,
            extra: BTreeMap::new(),
        });
    }
    let fuel_columns = fuel_column_order(fuel_cols.into_iter().map(|(f, _)| f).collect());
    Panel::new(records, fuel_columns, PhaseWindows::default())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the panel in the `ets-causal-v1` schema. Floats use the shortest
/// representation that parses back to the same value, so a write-then-read
/// cycle is exact.
pub fn write_panel_csv<W: Write>(panel: &Panel, mut out: W) -> Result<()> {
    writeln!(out, "# schema: {SCHEMA_VERSION}")?;
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(panel.fuel_columns.iter().map(|f| format!("{f}_mwh")));
    header.push("co2".into());
    writer.write_record(&header)?;
    for r in &panel.records {
        let mut row = vec![
            r.firm_id.clone(),
            r.year.to_string(),
            r.industry.to_string(),
            if r.ets { "1" } else { "0" }.to_string(),
            fmt_opt(r.output),
            fmt_opt(r.employees),
            fmt_opt(r.exports),
            fmt_opt(r.wage),
            fmt_opt(r.capital),
            fmt_opt(r.electricity),
        ];
        row.extend(panel.fuel_columns.iter().map(|f| fmt_opt(r.fuels[f])));
        row.push(fmt_opt(r.co2));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Value band retained by a mid-fraction trim. Applying a band to data it
/// was computed from, or to any subset of it, is idempotent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimBand {
    pub lower: f64,
    pub upper: f64,
}

impl TrimBand {
    pub fn retain(&self, values: &[f64]) -> Vec<usize> {
        values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v >= self.lower && **v <= self.upper)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Cut-offs for keeping the middle `fraction` of `values`.
///
/// With `m = floor(n * (1 - fraction) / 2)`, the band runs from the
/// `(m+1)`-th smallest to the `(m+1)`-th largest value, inclusive, so ties at
/// a cut-off are kept together.
pub fn mid_fraction_band(values: &[f64], fraction: f64) -> Result<TrimBand> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values to trim"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "trim fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let sorted = stats::sorted_copy(values);
    let n = sorted.len();
    let tail = (1.0 - fraction) / 2.0;
    let m = ((n as f64 * tail) + 1e-9).floor() as usize;
    let m = m.min((n - 1) / 2);
    Ok(TrimBand {
        lower: sorted[m],
        upper: sorted[n - 1 - m],
    })
}

/// Indices (ascending) of the observations inside the mid-`fraction` band.
pub fn trim_mid_fraction(values: &[f64], fraction: f64) -> Result<Vec<usize>> {
    Ok(mid_fraction_band(values, fraction)?.retain(values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub sd: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub n: usize,
}

/// Mean, sample sd (`n - 1`), and nearest-rank deciles/median.
pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values to summarise"));
    }
    let sorted = stats::sorted_copy(values);
    Ok(SummaryStats {
        // summed in sorted order so permutations give identical results
        mean: stats::mean(&sorted),
        sd: stats::sample_variance(&sorted).sqrt(),
        p10: stats::nearest_rank(&sorted, 0.1),
        p50: stats::nearest_rank(&sorted, 0.5),
        p90: stats::nearest_rank(&sorted, 0.9),
        n: sorted.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogChanges {
    pub changes: BTreeMap<FirmId, f64>,
    /// Firms lacking an observation in either year.
    pub excluded: Vec<FirmId>,
}

fn positive_log(var: &Variable, firm_id: &str, year: i32, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v.ln())
    } else {
        Err(Error::NonPositive {
            variable: var.to_string(),
            firm_id: firm_id.to_string(),
            year,
            value: v,
        })
    }
}

/// `ln v(to_year) - ln v(from_year)` per firm.
pub fn log_change(panel: &Panel, var: &Variable, from_year: i32, to_year: i32) -> Result<LogChanges> {
    let mut out = LogChanges::default();
    for firm in panel.firms() {
        let from = panel.value(&firm.firm_id, from_year, var);
        let to = panel.value(&firm.firm_id, to_year, var);
        match (from, to) {
            (Some(a), Some(b)) => {
                let la = positive_log(var, &firm.firm_id, from_year, a)?;
                let lb = positive_log(var, &firm.firm_id, to_year, b)?;
                out.changes.insert(firm.firm_id, lb - la);
            }
            _ => out.excluded.push(firm.firm_id),
        }
    }
    Ok(out)
}

/// How a variable enters a before/after difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Log,
    Level,
}

/// Per-firm change from `base_year` to a window of years: the mean over the
/// firm's observed window years minus the base-year value, on the given
/// scale. Firms missing the base year or every window year are listed in
/// `excluded`.
pub fn window_change(panel: &Panel, var: &Variable, base_year: i32, years: &[i32], scale: Scale) -> Result<LogChanges> {
    let mut out = LogChanges::default();
    let transform = |firm: &str, year: i32, v: f64| match scale {
        Scale::Log => positive_log(var, firm, year, v),
        Scale::Level => Ok(v),
    };
    for firm in panel.firms() {
        let id = &firm.firm_id;
        let Some(base) = panel.value(id, base_year, var) else {
            out.excluded.push(firm.firm_id);
            continue;
        };
        let base = transform(id, base_year, base)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for &y in years {
            if let Some(v) = panel.value(id, y, var) {
                sum += transform(id, y, v)?;
                count += 1;
            }
        }
        if count == 0 {
            out.excluded.push(firm.firm_id);
        } else {
            out.changes.insert(firm.firm_id, sum / count as f64 - base);
        }
    }
    Ok(out)
}

/// Per-year median of `var` divided by its base-year median. Years without
/// observations are absent from the result.
pub fn indexed_median_series(panel: &Panel, var: &Variable, base_year: i32) -> Result<BTreeMap<i32, f64>> {
    let base = stats::median(&panel.year_values(var, base_year))
        .ok_or_else(|| Error::InvalidArgument(format!("no observations of `{var}` in base year {base_year}")))?;
    if base == 0.0 || !base.is_finite() {
        return Err(Error::InvalidArgument(format!("base-year median of `{var}` is {base}")));
    }
    let mut series = BTreeMap::new();
    for year in panel.years() {
        if let Some(m) = stats::median(&panel.year_values(var, year)) {
            series.insert(year, if year == base_year { 1.0 } else { m / base });
        }
    }
    Ok(series)
}

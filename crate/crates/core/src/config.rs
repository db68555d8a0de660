//! Versioned TOML run configuration.
//!
//! ```toml
//! version = "ets-causal-config-v1"
//! seed = 42
//!
//! [dgp]
//! kind = "did"
//! n_firms = 2000
//!
//! [att]
//! outcomes = ["co2", "co2_intensity"]
//! k = [1, 20]
//! ```
//!
//! Exactly one of `input` (a panel CSV, relative to the config file) and
//! `[dgp]` must be given; `seed` is required with `[dgp]`. Every section is
//! optional and falls back to its defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frontier::FrontierOptions;
use crate::matching::BootstrapOptions;
use crate::panel::{FuelFactorTable, Period, PhaseWindows, Variable};
use crate::pipeline::AttSettings;
use crate::propensity::{default_covariates, Covariate};
use crate::report::Stars;
use crate::satt::{default_satt_covariates, default_satt_windows, SattSettings};
use crate::synthgen::DgpConfig;

pub const CONFIG_VERSION: &str = "ets-causal-config-v1";

fn names<T: ToString>(items: &[T]) -> Vec<String> {
    items.iter().map(ToString::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Analysis windows; defaults to those of the generator, or the
    /// standard windows for an input file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<PhaseWindows>,
    /// Emission factors for filling missing `co2` from fuel use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_factors: Option<FuelFactorTable>,
    #[serde(default)]
    pub propensity: PropensitySection,
    #[serde(default)]
    pub att: AttSection,
    #[serde(default)]
    pub frontier: FrontierSection,
    #[serde(default)]
    pub satt: SattSection,
    #[serde(default)]
    pub series: SeriesSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensitySection {
    pub covariates: Vec<String>,
    pub common_support: bool,
}

impl Default for PropensitySection {
    fn default() -> Self {
        PropensitySection {
            covariates: names(&default_covariates()),
            common_support: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttSection {
    pub outcomes: Vec<String>,
    pub periods: Vec<String>,
    pub k: Vec<usize>,
    pub with_replacement: bool,
    pub ols: bool,
    pub ols_covariates: Vec<String>,
    pub bootstrap_reps: usize,
    pub stars: Stars,
    /// Variables of the balance report.
    pub balance: Vec<String>,
}

impl Default for AttSection {
    fn default() -> Self {
        AttSection {
            outcomes: vec!["co2".into(), "co2_intensity".into()],
            periods: vec!["Phase I".into(), "Phase II".into()],
            k: vec![1, 20],
            with_replacement: true,
            ols: true,
            ols_covariates: Vec::new(),
            bootstrap_reps: BootstrapOptions::default().reps,
            stars: Stars::ThreeTier,
            balance: vec!["co2".into(), "output".into(), "employees".into(), "energy".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontierSection {
    pub min_obs: usize,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FrontierSection {
    fn default() -> Self {
        let o = FrontierOptions::default();
        FrontierSection {
            min_obs: o.min_obs,
            tolerance: o.tolerance,
            max_iter: o.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SattSection {
    pub covariates: Vec<String>,
    pub k: Vec<usize>,
    pub bootstrap_reps: usize,
    pub windows: PhaseWindows,
    pub stars: Stars,
    pub common_support: bool,
}

impl Default for SattSection {
    fn default() -> Self {
        SattSection {
            covariates: names(&default_satt_covariates()),
            k: vec![1, 5, 20],
            bootstrap_reps: BootstrapOptions::default().reps,
            windows: default_satt_windows(),
            stars: Stars::SingleFive,
            common_support: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesSection {
    /// Variables of the indexed-median series.
    pub variables: Vec<String>,
}

impl Default for SeriesSection {
    fn default() -> Self {
        SeriesSection {
            variables: ["co2", "output", "employees", "co2_intensity"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum McTarget {
    #[default]
    Att,
    Satt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub reps: usize,
    pub target: McTarget,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            reps: 200,
            target: McTarget::Att,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    /// Emissions panel with selection into treatment.
    Did,
    /// Stochastic-frontier panel.
    Sfa,
}

/// Generator block: the kind picks the default configuration and the other
/// keys override it, nested tables key by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSection {
    pub kind: DgpKind,
    #[serde(flatten)]
    pub overrides: toml::Table,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (key, value) in over {
        match (base.get_mut(key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}

impl DgpSection {
    pub fn config(&self) -> Result<DgpConfig> {
        let base = match self.kind {
            DgpKind::Did => DgpConfig::default(),
            DgpKind::Sfa => DgpConfig::sfa_default(),
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, &self.overrides);
        let config: DgpConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[dgp]: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }
}

fn parse_all<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.parse()).collect()
}

impl RunConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let config = Self::from_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Parses without the cross-field checks, for callers that apply
    /// overrides (such as a command-line seed) before validating.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version `{}` (expected `{CONFIG_VERSION}`)",
                self.version
            )));
        }
        match (&self.input, &self.dgp) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `input` or `[dgp]`, not both".into())),
            (None, None) => return Err(Error::Config("one of `input` or `[dgp]` is required".into())),
            (None, Some(dgp)) => {
                if self.seed.is_none() {
                    return Err(Error::Config("`seed` is required with `[dgp]`".into()));
                }
                dgp.config()?;
            }
            (Some(_), None) => {}
        }
        if let Some(w) = &self.windows {
            w.validate()?;
        }
        self.satt.windows.validate()?;
        if let Some(f) = &self.fuel_factors {
            f.validate()?;
        }
        parse_all::<Covariate>(&self.propensity.covariates)?;
        parse_all::<Covariate>(&self.att.ols_covariates)?;
        parse_all::<Covariate>(&self.satt.covariates)?;
        parse_all::<Variable>(&self.att.outcomes)?;
        parse_all::<Variable>(&self.att.balance)?;
        parse_all::<Variable>(&self.series.variables)?;
        parse_all::<Period>(&self.att.periods)?;
        if self.att.k.is_empty() || self.att.k.contains(&0) || self.satt.k.contains(&0) {
            return Err(Error::Config("neighbour counts must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization, ignoring the output
    /// directory so that runs into different directories agree.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn att_settings(&self) -> Result<AttSettings> {
        Ok(AttSettings {
            covariates: parse_all(&self.propensity.covariates)?,
            outcomes: parse_all(&self.att.outcomes)?,
            periods: parse_all(&self.att.periods)?,
            k_values: self.att.k.clone(),
            with_replacement: self.att.with_replacement,
            ols: self.att.ols,
            ols_covariates: parse_all(&self.att.ols_covariates)?,
            bootstrap: BootstrapOptions {
                reps: self.att.bootstrap_reps,
                seed: self.seed_or_default(),
            },
            common_support: self.propensity.common_support,
        })
    }

    pub fn satt_settings(&self) -> Result<SattSettings> {
        Ok(SattSettings {
            covariates: parse_all(&self.satt.covariates)?,
            k_values: self.satt.k.clone(),
            bootstrap: BootstrapOptions {
                reps: self.satt.bootstrap_reps,
                seed: self.seed_or_default(),
            },
            windows: self.satt.windows.clone(),
            common_support: self.satt.common_support,
        })
    }

    pub fn frontier_options(&self) -> FrontierOptions {
        FrontierOptions {
            min_obs: self.frontier.min_obs,
            tolerance: self.frontier.tolerance,
            max_iter: self.frontier.max_iter,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "version = \"ets-causal-config-v1\"\nseed = 7\n\n[dgp]\nkind = \"did\"\nn_firms = 300\n";

    #[test]
    fn minimal_config_round_trips() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.dgp.as_ref().unwrap().config().unwrap().n_firms, 300);
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn nested_overrides_merge_key_by_key() {
        let text = format!("{MINIMAL}[dgp.selection]\ntarget_share = 0.02\n");
        let dgp = RunConfig::parse(&text).unwrap().dgp.unwrap().config().unwrap();
        assert_eq!(dgp.selection.target_share, 0.02);
        assert_eq!(dgp.selection.ln_employees, DgpConfig::default().selection.ln_employees);
    }

    #[test]
    fn rejects_bad_shapes() {
        let no_seed = MINIMAL.replace("seed = 7\n", "");
        assert!(matches!(RunConfig::parse(&no_seed), Err(Error::Config(_))));
        let both = format!("input = \"p.csv\"\n{MINIMAL}");
        assert!(matches!(RunConfig::parse(&both), Err(Error::Config(_))));
        let old = MINIMAL.replace("v1", "v0");
        assert!(matches!(RunConfig::parse(&old), Err(Error::Config(_))));
        let typo = format!("{MINIMAL}n_firm = 3\n");
        assert!(RunConfig::parse(&typo).is_err());
        let unknown = MINIMAL.replace("[dgp]", "colour = 1\n[dgp]");
        assert!(matches!(RunConfig::parse(&unknown), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = Some(8);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn input_config_needs_no_seed() {
        let c = RunConfig::parse("version = \"ets-causal-config-v1\"\ninput = \"panel.csv\"\n").unwrap();
        assert_eq!(c.seed_or_default(), 0);
        assert_eq!(c.satt_settings().unwrap().k_values, vec![1, 5, 20]);
    }
}

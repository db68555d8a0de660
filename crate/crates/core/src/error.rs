use thiserror::Error;

use crate::panel::FirmId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate record for firm `{firm_id}` in year {year}")]
    DuplicateRecord { firm_id: FirmId, year: i32 },

    #[error("row {row}: malformed value {value:?} in column `{column}`")]
    Malformed { row: usize, column: String, value: String },

    #[error("row {row}: negative value {value} in column `{column}`")]
    NegativeQuantity { row: usize, column: String, value: f64 },

    #[error("firm `{firm_id}`: treatment flag varies across years")]
    InconsistentTreatment { firm_id: FirmId },

    #[error("no emission factor for fuel `{0}`")]
    MissingFactor(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("nonpositive value {value} of `{variable}` for firm `{firm_id}` in {year}")]
    NonPositive {
        variable: String,
        firm_id: FirmId,
        year: i32,
        value: f64,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("treatment vector contains a single class")]
    SingleClass,

    #[error("perfect separation: `{name}` reached {value:.3e}")]
    PerfectSeparation { name: String, value: f64 },

    #[error("collinear design: {0}")]
    Collinear(String),

    #[error("column mismatch: model expects {expected:?}, data has {found:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },

    #[error("too few observations: need at least {needed}, found {found}")]
    TooFewObservations { needed: usize, found: usize },

    #[error("weighted design matrix is singular")]
    SingularDesign,

    #[error("cluster-robust variance needs at least two clusters")]
    SingleCluster,

    #[error("no control units available for matching")]
    NoControls,

    #[error("no treated units left for estimation")]
    EmptyTreated,

    #[error("no frontier model for industry {0}")]
    MissingModel(u16),

    #[error("frontier scales sigma_u and sigma_v are both zero")]
    DegenerateScales,

    #[error("degenerate treatment realization after {attempts} attempts")]
    DegenerateTreatment { attempts: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

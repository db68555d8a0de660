//! Matching difference-in-differences, propensity scores and stochastic
//! frontier estimation for firm-level panels of emissions-trading
//! participants and non-participants.

pub mod config;
pub mod error;
pub mod frontier;
pub mod matching;
pub mod montecarlo;
pub mod panel;
pub mod pipeline;
pub mod propensity;
pub mod report;
pub mod run;
pub mod satt;
pub mod seed;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};

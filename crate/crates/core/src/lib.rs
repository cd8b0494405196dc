//! Confidence intervals for least-squares slopes when the linear model is
//! only an approximation: the calibrated percentile double bootstrap, ten
//! baseline constructions, and a Monte Carlo harness for measuring their
//! coverage.

pub mod error;
pub mod harness;
pub mod intervals;
pub mod regress;
pub mod report;
pub mod resample;
pub mod standin;
pub mod synthetic;
pub mod table;

pub use error::{Error, Result};

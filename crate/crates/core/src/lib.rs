//! Interrupted Pareto tails in firm-size data.
//!
//! - [`dataset`]: yearly firm snapshots and sector aggregates
//! - [`tailfit`]: empirical CCDF and log-log fit of the Pareto exponent
//! - [`sbindex`]: missing top-tail mass against the fitted line
//! - [`prgsim`]: proportional random growth with top-firm shedding
//! - [`calibrate`]: grid calibration of the shedding rate
//! - [`kernelreg`]: Nadaraya-Watson regression of returns on assets
//! - [`export`]: CSV writers for plot data

pub mod calibrate;
pub mod dataset;
pub mod error;
pub mod export;
pub mod kernelreg;
pub mod prgsim;
pub mod sbindex;
pub mod tailfit;

pub use error::{Error, Result};

//! JSON run configuration for `simulate` and `calibrate`.
//!
//! Model parameters and simulation settings live in one flat object. The
//! seed is deliberately absent: it comes from `--seed` only.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shadowtail::prgsim::{DriftConvention, PrgParams, SimConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mu: f64,
    pub sigma: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::entry_size")]
    pub entry_size: f64,
    #[serde(default = "defaults::n_firms_init")]
    pub n_firms_init: usize,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::keep_top")]
    pub keep_top: usize,
    #[serde(default)]
    pub drift_convention: DriftConvention,
}

mod defaults {
    use shadowtail::prgsim::{PrgParams, SimConfig};

    pub fn epsilon() -> f64 {
        PrgParams::new(0.0, 1.0, 0.0).epsilon
    }
    pub fn entry_size() -> f64 {
        PrgParams::new(0.0, 1.0, 0.0).entry_size
    }
    pub fn n_firms_init() -> usize {
        SimConfig::default().n_firms_init
    }
    pub fn dt() -> f64 {
        SimConfig::default().dt
    }
    pub fn burn_in() -> f64 {
        SimConfig::default().burn_in
    }
    pub fn horizon() -> f64 {
        SimConfig::default().horizon
    }
    pub fn keep_top() -> usize {
        SimConfig::default().keep_top
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Core(shadowtail::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn params(&self) -> PrgParams {
        PrgParams {
            mu: self.mu,
            sigma: self.sigma,
            h: self.h,
            nu: self.nu,
            lambda: self.lambda,
            epsilon: self.epsilon,
            entry_size: self.entry_size,
        }
    }

    pub fn sim(&self, seed: u64) -> SimConfig {
        SimConfig {
            n_firms_init: self.n_firms_init,
            dt: self.dt,
            burn_in: self.burn_in,
            horizon: self.horizon,
            seed,
            keep_top: self.keep_top,
            drift_convention: self.drift_convention,
        }
    }
}

//! Grid calibration of the shedding rate against an observed top-rank list.
//!
//! For each candidate rate the simulator runs `n_replicas` times, and the
//! simulated top lists are compared with the observed one through
//! `Z_k = <ln(S_k / S0_k)>` (mean over replicas). The objective is the mean
//! square deviation of `Z_k` around its average, which ignores any common
//! scale factor between simulated and observed sizes.
//!
//! Replica `r` draws from stream `r` of `config.seed` at every candidate, so
//! candidates are compared on common random numbers. Sums run in rank order
//! and, within a rank, in replica order, independently of threading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prgsim::{simulate_replica, PrgParams, SimConfig};

pub const DEFAULT_REPLICAS: usize = 100;
pub const DEFAULT_RANKS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZkObjective {
    pub z_k: Vec<f64>,
    pub z_bar: f64,
    pub mse: f64,
    pub n_replicas: usize,
}

fn check_ranked(name: &str, sizes: &[f64], n: usize) -> Result<()> {
    if sizes.len() < n {
        return Err(Error::LengthMismatch(format!(
            "{name} has {} sizes, need {n}",
            sizes.len()
        )));
    }
    let top = &sizes[..n];
    if let Some(&bad) = top.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::NonPositiveSize(bad));
    }
    if top.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(format!("{name} is not sorted descending")));
    }
    Ok(())
}

/// Objective over the first `n_ranks` ranks of each list.
pub fn zk_objective(simulated: &[Vec<f64>], observed: &[f64], n_ranks: usize) -> Result<ZkObjective> {
    if simulated.is_empty() {
        return Err(Error::EmptyInput("no simulated replicas"));
    }
    if n_ranks == 0 {
        return Err(Error::InvalidParameter("n_ranks must be at least 1".into()));
    }
    check_ranked("observed list", observed, n_ranks)?;
    for (r, rep) in simulated.iter().enumerate() {
        check_ranked(&format!("replica {r}"), rep, n_ranks)?;
    }
    let reps = simulated.len() as f64;
    let z_k: Vec<f64> = (0..n_ranks)
        .map(|k| {
            let obs = observed[k];
            simulated.iter().map(|rep| (rep[k] / obs).ln()).sum::<f64>() / reps
        })
        .collect();
    let n = n_ranks as f64;
    let z_bar = z_k.iter().sum::<f64>() / n;
    let mse = z_k.iter().map(|z| (z - z_bar) * (z - z_bar)).sum::<f64>() / n;
    Ok(ZkObjective {
        z_k,
        z_bar,
        mse,
        n_replicas: simulated.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub sim: SimConfig,
    pub n_replicas: usize,
    /// Ranks entering the objective.
    pub n_ranks: usize,
}

impl CalibrationConfig {
    pub fn new(sim: SimConfig) -> Self {
        CalibrationConfig {
            n_ranks: DEFAULT_RANKS.min(sim.keep_top),
            sim,
            n_replicas: DEFAULT_REPLICAS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub lambda: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_hat: f64,
    pub objective_curve: Vec<ObjectivePoint>,
    pub epsilon: f64,
    /// `epsilon * lambda_hat`, per year.
    pub flux: f64,
    pub n_replicas: usize,
    pub seed: u64,
}

fn run_replicas(params: &PrgParams, cfg: &CalibrationConfig) -> Result<Vec<Vec<f64>>> {
    let one = |r: usize| -> Result<Vec<f64>> {
        let mut res = simulate_replica(params, &cfg.sim, r as u64)?;
        res.sizes_top.truncate(cfg.n_ranks);
        Ok(res.sizes_top)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.n_replicas).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.n_replicas).map(one).collect()
    }
}

/// Objective value at one candidate rate.
pub fn objective_at(base: &PrgParams, cfg: &CalibrationConfig, observed: &[f64], lambda: f64) -> Result<ZkObjective> {
    let wrap = |e: Error| Error::Candidate {
        lambda,
        source: Box::new(e),
    };
    let params = base.with_lambda(lambda);
    let sims = run_replicas(&params, cfg).map_err(wrap)?;
    zk_objective(&sims, observed, cfg.n_ranks).map_err(wrap)
}

/// Evaluates every candidate in `grid` and returns the minimiser, breaking
/// ties toward the smaller rate. The `lambda` of `base` is ignored.
pub fn calibrate_lambda(
    base: &PrgParams,
    cfg: &CalibrationConfig,
    observed: &[f64],
    grid: &[f64],
) -> Result<CalibrationResult> {
    let mut out = calibrate_lambda_many(base, cfg, &[observed], grid)?;
    Ok(out.remove(0))
}

/// [`calibrate_lambda`] against several observed lists at once. Each
/// candidate's replicas are simulated once and scored against every list,
/// so result `i` equals `calibrate_lambda(base, cfg, observed[i], grid)`.
pub fn calibrate_lambda_many(
    base: &PrgParams,
    cfg: &CalibrationConfig,
    observed: &[&[f64]],
    grid: &[f64],
) -> Result<Vec<CalibrationResult>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("empty lambda grid"));
    }
    if observed.is_empty() {
        return Err(Error::EmptyInput("no observed lists"));
    }
    if let Some(&bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter(format!("lambda candidate {bad} is negative")));
    }
    if cfg.n_replicas == 0 {
        return Err(Error::InvalidParameter("n_replicas must be at least 1".into()));
    }
    for obs in observed {
        check_ranked("observed list", obs, cfg.n_ranks)?;
    }
    base.with_lambda(0.0).validate()?;

    let mut curves = vec![Vec::with_capacity(grid.len()); observed.len()];
    for &lambda in grid {
        let wrap = |e: Error| Error::Candidate {
            lambda,
            source: Box::new(e),
        };
        let sims = run_replicas(&base.with_lambda(lambda), cfg).map_err(wrap)?;
        for (curve, obs) in curves.iter_mut().zip(observed) {
            let obj = zk_objective(&sims, obs, cfg.n_ranks).map_err(wrap)?;
            curve.push(ObjectivePoint { lambda, mse: obj.mse });
        }
    }
    Ok(curves
        .into_iter()
        .map(|curve| {
            let best = curve
                .iter()
                .copied()
                .reduce(|b, p| {
                    if p.mse < b.mse || (p.mse == b.mse && p.lambda < b.lambda) {
                        p
                    } else {
                        b
                    }
                })
                .expect("grid is non-empty");
            CalibrationResult {
                lambda_hat: best.lambda,
                objective_curve: curve,
                epsilon: base.epsilon,
                flux: base.epsilon * best.lambda,
                n_replicas: cfg.n_replicas,
                seed: cfg.sim.seed,
            }
        })
        .collect())
}

/// Candidates for [`flux_scan`], either as rates or as fluxes
/// `epsilon * lambda` converted per epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateGrid {
    Lambda(Vec<f64>),
    Flux(Vec<f64>),
}

impl CandidateGrid {
    pub fn lambdas(&self, epsilon: f64) -> Vec<f64> {
        match self {
            CandidateGrid::Lambda(l) => l.clone(),
            CandidateGrid::Flux(f) => f.iter().map(|x| x / epsilon).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxPoint {
    pub epsilon: f64,
    pub lambda_hat: f64,
    pub flux: f64,
    pub calibration: CalibrationResult,
}

pub fn flux_scan(
    base: &PrgParams,
    cfg: &CalibrationConfig,
    observed: &[f64],
    epsilons: &[f64],
    grid: &CandidateGrid,
) -> Result<Vec<FluxPoint>> {
    if epsilons.is_empty() {
        return Err(Error::EmptyInput("no epsilon values"));
    }
    epsilons
        .iter()
        .map(|&epsilon| {
            if !(epsilon > 0.0 && epsilon <= 0.1) {
                return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside (0, 0.1]")));
            }
            let params = PrgParams { epsilon, ..*base };
            let cal = calibrate_lambda(&params, cfg, observed, &grid.lambdas(epsilon))?;
            Ok(FluxPoint {
                epsilon,
                lambda_hat: cal.lambda_hat,
                flux: cal.flux,
                calibration: cal,
            })
        })
        .collect()
}

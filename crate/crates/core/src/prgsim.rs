//! Proportional random growth with exit, entry and top-firm shedding.
//!
//! Each step of length `dt` applies, in order:
//!
//! 1. growth: every log-size moves by `drift * dt + sigma * sqrt(dt) * z`;
//! 2. exit: every firm leaves with probability `h * dt`;
//! 3. entry: `Poisson(nu * dt)` firms enter at `entry_size`;
//! 4. shedding: with probability `lambda * dt` the largest firm (lowest index
//!    among ties) is scaled by `1 - epsilon`, and the removed assets are
//!    added to `shed_total`.
//!
//! The engine realises this law without touching every firm on every step.
//! Gaussian increments over consecutive steps are summed in one draw, and
//! per-step exit coins are replaced by a geometric lifetime drawn at entry,
//! which is the same distribution. Firms are brought up to date only when
//! the largest one must be known, which only happens at shedding events.
//!
//! Firms within a narrow band below the current maximum are candidates and
//! are updated at every event. Every other firm is parked with an upper
//! bound on its log-size, `log_size + drift * m + ENVELOPE_SIGMAS * sigma *
//! sqrt(m dt)`, that stays below the band for the next `m` steps, and is
//! looked at again only when that window runs out. If no candidate reaches
//! the band, everything is resynchronised. A Brownian path leaves an
//! 8-sigma envelope with probability about 1e-15, so the approximation is
//! invisible at any practical run length.
//!
//! Randomness comes from ChaCha8 seeded with `config.seed`; replica `r` uses
//! stream `r` of the same key, so replicas never share a stream and replica
//! `r` of a run is reproducible on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Snapshot;
use crate::error::{Error, Result};

/// Width of the growth envelope used to rule firms out of the shedding
/// lottery without updating them.
pub const ENVELOPE_SIGMAS: f64 = 8.0;

/// Width, in log-size, of the band below the current maximum whose firms
/// are checked at every shedding event.
const TOP_BAND: f64 = 0.5;
/// Share of a parked firm's gap to the threshold its envelope may use.
const PARK_FRACTION: f64 = 0.8;
/// Firms whose envelope window would be shorter than this stay candidates.
const MIN_PARK_STEPS: u64 = 8;

/// Exponent of the stationary size distribution:
/// `gamma = 1/2 [a + sqrt(a^2 + 8 h / sigma^2)]`, `a = 1 - 2 mu / sigma^2`.
pub fn gamma_from_params(mu: f64, sigma: f64, h: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !(h >= 0.0) {
        return Err(Error::InvalidParameter(format!("h must be non-negative, got {h}")));
    }
    let s2 = sigma * sigma;
    let a = 1.0 - 2.0 * mu / s2;
    let root = (a * a + 8.0 * h / s2).sqrt();
    // the rationalised form avoids cancellation when a is very negative
    Ok(if a >= 0.0 {
        0.5 * (a + root)
    } else {
        4.0 * h / s2 / (root - a)
    })
}

/// Exit rate producing exponent `gamma`: `h = sigma^2 gamma (gamma - a) / 2`.
pub fn h_from_gamma(gamma: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let s2 = sigma * sigma;
    let a = 1.0 - 2.0 * mu / s2;
    let h = 0.5 * s2 * gamma * (gamma - a);
    if h < 0.0 {
        return Err(Error::NegativeExitRate(h));
    }
    Ok(h)
}

/// How `mu` relates to log-size increments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftConvention {
    /// `E[dS/S] = mu dt`; log-size drifts at `mu - sigma^2/2`.
    #[default]
    Geometric,
    /// Log-size drifts at `mu`.
    Log,
}

impl DriftConvention {
    pub fn log_drift(self, mu: f64, sigma: f64) -> f64 {
        match self {
            DriftConvention::Geometric => mu - 0.5 * sigma * sigma,
            DriftConvention::Log => mu,
        }
    }
}

pub const MIN_MATCHED: usize = 30;

/// `(mu_hat, sigma_hat)` from per-firm log growth over `years` years.
pub fn drift_vol_from_log_returns(r: &[f64], years: f64, convention: DriftConvention) -> Result<(f64, f64)> {
    if r.len() < 2 {
        return Err(Error::TooFewMatches {
            found: r.len(),
            need: 2,
        });
    }
    if !(years > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "interval must be positive, got {years}"
        )));
    }
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sigma = (var / years).sqrt();
    let log_drift = mean / years;
    let mu = match convention {
        DriftConvention::Geometric => log_drift + 0.5 * sigma * sigma,
        DriftConvention::Log => log_drift,
    };
    Ok((mu, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftVolEstimate {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub n_matched: usize,
}

/// Estimates drift and volatility from firms present in both snapshots
/// under the same name. Names that repeat within a snapshot are skipped.
/// The interval is the difference of the list years.
pub fn estimate_drift_vol(prev: &Snapshot, next: &Snapshot, convention: DriftConvention) -> Result<DriftVolEstimate> {
    use std::collections::HashMap;

    let years = f64::from(next.list_year() - prev.list_year());
    if years <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "next list year {} must follow {}",
            next.list_year(),
            prev.list_year()
        )));
    }
    fn unique(s: &Snapshot) -> HashMap<&str, Option<f64>> {
        let mut m: HashMap<&str, Option<f64>> = HashMap::new();
        for f in s.firms() {
            m.entry(f.name.as_str())
                .and_modify(|v| *v = None)
                .or_insert(Some(f.assets));
        }
        m
    }
    let before = unique(prev);
    let after = unique(next);
    // file order of `prev` keeps the summation order reproducible
    let mut r = Vec::new();
    for f in prev.firms() {
        if let (Some(Some(a0)), Some(Some(a1))) = (before.get(f.name.as_str()), after.get(f.name.as_str())) {
            r.push((a1 / a0).ln());
        }
    }
    if r.len() < MIN_MATCHED {
        return Err(Error::TooFewMatches {
            found: r.len(),
            need: MIN_MATCHED,
        });
    }
    let (mu_hat, sigma_hat) = drift_vol_from_log_returns(&r, years, convention)?;
    Ok(DriftVolEstimate {
        mu_hat,
        sigma_hat,
        n_matched: r.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrgParams {
    pub mu: f64,
    pub sigma: f64,
    /// Exit rate per firm per year.
    pub h: f64,
    /// Entry rate in firms per year; `None` means `h * n_firms_init`.
    #[serde(default)]
    pub nu: Option<f64>,
    /// Shedding events per year.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_entry_size")]
    pub entry_size: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_entry_size() -> f64 {
    1.0
}

impl PrgParams {
    /// Stationary-population parameters without shedding.
    pub fn new(mu: f64, sigma: f64, h: f64) -> Self {
        PrgParams {
            mu,
            sigma,
            h,
            nu: None,
            lambda: 0.0,
            epsilon: default_epsilon(),
            entry_size: default_entry_size(),
        }
    }

    pub fn with_shedding(mut self, lambda: f64, epsilon: f64) -> Self {
        self.lambda = lambda;
        self.epsilon = epsilon;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn effective_nu(&self, config: &SimConfig) -> f64 {
        self.nu.unwrap_or(self.h * config.n_firms_init as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !self.mu.is_finite() {
            return bad(format!("mu must be finite, got {}", self.mu));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return bad(format!("h must be non-negative, got {}", self.h));
        }
        if let Some(nu) = self.nu {
            if !(nu >= 0.0 && nu.is_finite()) {
                return bad(format!("nu must be non-negative, got {nu}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.entry_size > 0.0 && self.entry_size.is_finite()) {
            return bad(format!("entry_size must be positive, got {}", self.entry_size));
        }
        Ok(())
    }

    /// Exponent of the stationary distribution without shedding.
    pub fn gamma(&self) -> Result<f64> {
        gamma_from_params(self.mu, self.sigma, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_firms_init: usize,
    /// Years per step.
    pub dt: f64,
    /// Years simulated before the measurement window.
    pub burn_in: f64,
    /// Length of the measurement window in years.
    pub horizon: f64,
    pub seed: u64,
    pub keep_top: usize,
    #[serde(default)]
    pub drift_convention: DriftConvention,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_firms_init: 20_000,
            dt: 0.01,
            burn_in: 200.0,
            horizon: 1.0,
            seed: 0,
            keep_top: 2000,
            drift_convention: DriftConvention::Geometric,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, params: &PrgParams) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_firms_init == 0 {
            return bad("n_firms_init must be at least 1".into());
        }
        if self.keep_top == 0 {
            return bad("keep_top must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return bad(format!("dt must lie in (0, 0.1], got {}", self.dt));
        }
        if !(self.burn_in > 0.0 && self.burn_in.is_finite()) {
            return bad(format!("burn_in must be positive, got {}", self.burn_in));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        for (rate_name, rate) in [("h", params.h), ("lambda", params.lambda)] {
            let value = rate * self.dt;
            if value > 0.5 {
                return Err(Error::StepTooCoarse { rate_name, value });
            }
        }
        Ok(())
    }

    /// Burn-in recommended by the `50 * max(1/h, 1)` relaxation heuristic.
    pub fn recommended_burn_in(h: f64) -> Option<f64> {
        (h > 0.0).then(|| 50.0 * (1.0 / h).max(1.0))
    }

    /// Warning text when `burn_in` is shorter than the heuristic asks for.
    pub fn relaxation_warning(&self, params: &PrgParams) -> Option<String> {
        let rec = Self::recommended_burn_in(params.h)?;
        (self.burn_in < rec).then(|| {
            format!(
                "burn_in {} y is below the relaxation heuristic 50*max(1/h,1) = {rec} y",
                self.burn_in
            )
        })
    }

    fn steps(&self) -> (u64, u64) {
        let burn = (self.burn_in / self.dt).round().max(1.0) as u64;
        let total = ((self.burn_in + self.horizon) / self.dt).round() as u64;
        (burn, total.max(burn + 1))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub entries: u64,
    pub exits: u64,
    pub sheddings: u64,
}

/// Outcome of one run. `shed_total` and `n_events` cover the measurement
/// window only; burn-in events are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Up to `keep_top` largest sizes at the end, descending.
    pub sizes_top: Vec<f64>,
    pub shed_total: f64,
    pub n_events: EventCounts,
    /// Firms alive at the end.
    pub population: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShedEvent {
    pub step: u64,
    pub size_before: f64,
    pub size_after: f64,
    pub amount: f64,
}

/// Random generator for replica `replica` of a run seeded with `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

pub fn simulate(params: &PrgParams, config: &SimConfig) -> Result<SimResult> {
    simulate_replica(params, config, 0)
}

pub fn simulate_replica(params: &PrgParams, config: &SimConfig, replica: u64) -> Result<SimResult> {
    Engine::new(params, config, replica_rng(config.seed, replica))?.run(|_| {})
}

/// Like [`simulate`], also returning every shedding event including burn-in.
pub fn simulate_traced(params: &PrgParams, config: &SimConfig) -> Result<(SimResult, Vec<ShedEvent>)> {
    let mut events = Vec::new();
    let res = Engine::new(params, config, replica_rng(config.seed, 0))?.run(|e| events.push(e))?;
    Ok((res, events))
}

#[derive(Debug, Clone, Copy)]
struct Firm {
    log_size: f64,
    /// Step the log-size is current at.
    synced: u64,
    /// Step whose exit sub-step removes the firm.
    exit_step: u64,
    /// Bumped on reclassification; calendar entries with an older version
    /// are stale.
    version: u32,
    candidate: bool,
    /// Last step a parked firm's bound covers.
    deadline: u64,
}

struct Engine<'a> {
    params: &'a PrgParams,
    rng: ChaCha8Rng,
    dt: f64,
    keep_top: usize,
    firms: Vec<Firm>,
    drift_step: f64,
    vol_step: f64,
    burn_steps: u64,
    total_steps: u64,
    exits_at: Vec<u32>,
    alive: usize,
    lifetime: Option<Geometric>,
    entries: Option<Poisson<f64>>,
    shed_p: f64,
    /// Firms below this log-size are parked until their bound expires;
    /// `None` until the first shedding event.
    threshold: Option<f64>,
    /// Firms that may be the largest at the next shedding event.
    candidates: Vec<usize>,
    /// `calendar[d]` lists parked firms whose bound expires after step `d`.
    calendar: Vec<Vec<(usize, u32)>>,
    /// Last step whose calendar bucket was processed.
    calendar_done: u64,
}

impl<'a> Engine<'a> {
    fn new(params: &'a PrgParams, config: &SimConfig, rng: ChaCha8Rng) -> Result<Self> {
        params.validate()?;
        config.validate(params)?;
        let (burn_steps, total_steps) = config.steps();
        let p_exit = params.h * config.dt;
        let nu_dt = params.effective_nu(config) * config.dt;
        let lifetime = (p_exit > 0.0)
            .then(|| Geometric::new(p_exit).map_err(|e| Error::InvalidParameter(e.to_string())))
            .transpose()?;
        let entries = (nu_dt > 0.0)
            .then(|| Poisson::new(nu_dt).map_err(|e| Error::InvalidParameter(e.to_string())))
            .transpose()?;
        let shed_p = params.lambda * config.dt;
        let mut engine = Engine {
            params,
            rng,
            dt: config.dt,
            keep_top: config.keep_top,
            firms: Vec::with_capacity(config.n_firms_init),
            drift_step: config.drift_convention.log_drift(params.mu, params.sigma) * config.dt,
            vol_step: params.sigma * config.dt.sqrt(),
            burn_steps,
            total_steps,
            exits_at: vec![0; total_steps as usize + 1],
            alive: 0,
            lifetime,
            entries,
            shed_p,
            threshold: None,
            candidates: Vec::new(),
            calendar: if shed_p > 0.0 {
                vec![Vec::new(); total_steps as usize + 1]
            } else {
                Vec::new()
            },
            calendar_done: 0,
        };
        for _ in 0..config.n_firms_init {
            engine.enter(0);
        }
        Ok(engine)
    }

    fn enter(&mut self, step: u64) {
        let exit_step = match &self.lifetime {
            // first exit check happens on the following step
            Some(g) => step.saturating_add(1).saturating_add(g.sample(&mut self.rng)),
            None => u64::MAX,
        };
        if exit_step <= self.total_steps {
            self.exits_at[exit_step as usize] += 1;
        }
        self.firms.push(Firm {
            log_size: self.params.entry_size.ln(),
            synced: step,
            exit_step,
            version: 0,
            candidate: false,
            deadline: 0,
        });
        self.alive += 1;
        if self.threshold.is_some() {
            self.classify(self.firms.len() - 1);
        }
    }

    fn sync(&mut self, i: usize, step: u64) {
        let f = &mut self.firms[i];
        let m = step - f.synced;
        if m > 0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let mf = m as f64;
            f.log_size += self.drift_step * mf + self.vol_step * mf.sqrt() * z;
            f.synced = step;
        }
    }

    /// Longest window, in steps, over which the growth envelope of a firm
    /// at `log_size` stays within most of its gap to the threshold.
    fn window_for(&self, log_size: f64, threshold: f64) -> u64 {
        let c = PARK_FRACTION * (threshold - log_size);
        if c <= 0.0 {
            return 0;
        }
        // envelope(m) = a m + b sqrt(m); solve for sqrt(m)
        let a = self.drift_step.max(0.0);
        let b = ENVELOPE_SIGMAS * self.vol_step;
        let root = if a > 0.0 {
            2.0 * c / (b + (b * b + 4.0 * a * c).sqrt())
        } else {
            c / b
        };
        let w = root * root;
        if w >= self.total_steps as f64 {
            self.total_steps
        } else {
            w.floor() as u64
        }
    }

    /// Parks firm `i` in the calendar or makes it a candidate. The firm must
    /// be synced and not yet in the candidate list.
    fn classify(&mut self, i: usize) {
        let threshold = self.threshold.expect("threshold is set");
        let f = self.firms[i];
        let w = self.window_for(f.log_size, threshold);
        let f = &mut self.firms[i];
        f.version = f.version.wrapping_add(1);
        if w < MIN_PARK_STEPS {
            f.candidate = true;
            self.candidates.push(i);
        } else {
            f.candidate = false;
            let deadline = (f.synced + w).min(self.total_steps);
            f.deadline = deadline;
            if deadline < f.exit_step {
                self.calendar[deadline as usize].push((i, f.version));
            }
        }
    }

    /// Re-examines parked firms whose bound does not cover `step`.
    fn drain_calendar(&mut self, step: u64) {
        while self.calendar_done + 1 < step {
            self.calendar_done += 1;
            let bucket = std::mem::take(&mut self.calendar[self.calendar_done as usize]);
            for (i, version) in bucket {
                let f = self.firms[i];
                if f.version != version || f.exit_step <= step {
                    continue;
                }
                self.sync(i, step);
                self.classify(i);
            }
        }
    }

    /// Syncs every live firm and reclassifies against a threshold below the
    /// current maximum.
    fn rebuild(&mut self, step: u64) {
        self.candidates.clear();
        for bucket in &mut self.calendar {
            bucket.clear();
        }
        self.calendar_done = step - 1;
        let mut top = f64::NEG_INFINITY;
        for i in 0..self.firms.len() {
            if self.firms[i].exit_step > step {
                self.sync(i, step);
                top = top.max(self.firms[i].log_size);
            }
        }
        self.threshold = Some(top - TOP_BAND);
        for i in 0..self.firms.len() {
            if self.firms[i].exit_step > step {
                self.classify(i);
            }
        }
    }

    /// Index of the largest live firm at `step`, lowest index among ties.
    fn largest(&mut self, step: u64) -> usize {
        if self.threshold.is_none() {
            self.rebuild(step);
        }
        self.drain_calendar(step);
        loop {
            let threshold = self.threshold.expect("threshold is set");
            let mut best: Option<(usize, f64)> = None;
            let mut k = 0;
            while k < self.candidates.len() {
                let i = self.candidates[k];
                if self.firms[i].exit_step <= step {
                    self.firms[i].candidate = false;
                    self.candidates.swap_remove(k);
                    continue;
                }
                self.sync(i, step);
                let v = self.firms[i].log_size;
                if best.is_none_or(|(j, b)| v > b || (v == b && i < j)) {
                    best = Some((i, v));
                }
                k += 1;
            }
            match best {
                Some((i, v)) if v >= threshold => {
                    #[cfg(test)]
                    self.check_parked(step);
                    // raising the threshold keeps every parked bound valid
                    if v - TOP_BAND > threshold {
                        self.threshold = Some(v - TOP_BAND);
                        self.demote(step);
                    }
                    return i;
                }
                _ => self.rebuild(step),
            }
        }
    }

    #[cfg(test)]
    fn check_parked(&self, step: u64) {
        for f in &self.firms {
            if f.exit_step > step && !f.candidate {
                assert!(f.deadline >= step, "parked bound expired: {} < {step}", f.deadline);
            }
        }
    }

    /// Parks candidates that have fallen well below the threshold.
    fn demote(&mut self, step: u64) {
        let threshold = self.threshold.expect("threshold is set");
        let mut k = 0;
        while k < self.candidates.len() {
            let i = self.candidates[k];
            debug_assert_eq!(self.firms[i].synced, step);
            if self.window_for(self.firms[i].log_size, threshold) >= MIN_PARK_STEPS {
                self.candidates.swap_remove(k);
                self.classify(i);
            } else {
                k += 1;
            }
        }
    }

    fn run(mut self, mut on_shed: impl FnMut(ShedEvent)) -> Result<SimResult> {
        let mut counts = EventCounts::default();
        let mut shed_total = 0.0;
        for t in 1..=self.total_steps {
            let measuring = t > self.burn_steps;

            // (i) growth is applied lazily; (ii) exits
            let exits = self.exits_at[t as usize] as usize;
            self.alive -= exits;

            // (iii) entries
            if let Some(pois) = self.entries {
                let k = pois.sample(&mut self.rng) as u64;
                for _ in 0..k {
                    self.enter(t);
                }
                if measuring {
                    counts.entries += k;
                }
            }
            if measuring {
                counts.exits += exits as u64;
            }
            if self.alive == 0 {
                return Err(Error::Extinct {
                    time: t as f64 * self.dt,
                });
            }

            // (iv) shedding
            if self.shed_p > 0.0 && self.rng.random::<f64>() < self.shed_p {
                let i = self.largest(t);
                let f = &mut self.firms[i];
                let size_before = f.log_size.exp();
                let amount = self.params.epsilon * size_before;
                let size_after = size_before - amount;
                f.log_size = size_after.ln();
                on_shed(ShedEvent {
                    step: t,
                    size_before,
                    size_after,
                    amount,
                });
                if measuring {
                    counts.sheddings += 1;
                    shed_total += amount;
                }
            }
        }

        let end = self.total_steps;
        self.firms.retain(|f| f.exit_step > end);
        for i in 0..self.firms.len() {
            self.sync(i, end);
        }
        let mut sizes: Vec<f64> = self.firms.iter().map(|f| f.log_size.exp()).collect();
        sizes.sort_by(|a, b| b.total_cmp(a));
        let population = sizes.len();
        sizes.truncate(self.keep_top);
        Ok(SimResult {
            sizes_top: sizes,
            shed_total,
            n_events: counts,
            population,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FirmRecord;
    use proptest::prelude::*;
    use rand::Rng;

    const MU: f64 = 0.09;
    const SIGMA: f64 = 0.17;
    const H: f64 = 0.08;

    #[test]
    fn gamma_examples() {
        assert!((gamma_from_params(0.0, 0.2, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((gamma_from_params(0.0, 0.3, 0.09).unwrap() - 2.0).abs() < 1e-12);
        assert!((gamma_from_params(MU, SIGMA, H).unwrap() - 0.903).abs() < 5e-4);
        assert!(gamma_from_params(MU, 0.0, H).is_err());
        assert!(gamma_from_params(MU, SIGMA, -0.1).is_err());
    }

    #[test]
    fn h_examples() {
        // a = 1 - 2 * 0.09 / 0.0289 is about -5.23
        let h = h_from_gamma(0.90, MU, SIGMA).unwrap();
        assert!((h - 0.0797).abs() < 5e-4, "{h}");
        assert!((h_from_gamma(1.0, 0.0, 0.2).unwrap()).abs() < 1e-15);
        assert!(matches!(h_from_gamma(0.5, 0.0, 0.2), Err(Error::NegativeExitRate(_))));
        assert!(h_from_gamma(0.0, MU, SIGMA).is_err());
    }

    #[test]
    fn gamma_increases_with_exit_rate() {
        let mut prev = -1.0;
        for i in 0..50 {
            let g = gamma_from_params(MU, SIGMA, 0.01 * i as f64).unwrap();
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn gamma_decreases_with_drift() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let g = gamma_from_params(-0.1 + 0.005 * i as f64, SIGMA, H).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    proptest! {
        #[test]
        fn gamma_h_round_trip(gamma in 0.05f64..5.0, mu in -0.2f64..0.2, sigma in 0.05f64..1.0) {
            let a = 1.0 - 2.0 * mu / (sigma * sigma);
            prop_assume!(gamma >= a);
            let h = h_from_gamma(gamma, mu, sigma).unwrap();
            let back = gamma_from_params(mu, sigma, h).unwrap();
            prop_assert!((back - gamma).abs() <= 1e-12 * gamma.max(1.0), "{} vs {}", back, gamma);
        }
    }

    #[test]
    fn drift_vol_two_firms() {
        let (mu, sigma) = drift_vol_from_log_returns(&[0.0, 0.2], 1.0, DriftConvention::Geometric).unwrap();
        assert!((sigma - 0.2f64.sqrt() / 10f64.sqrt()).abs() < 1e-12);
        assert!((sigma - 0.1414).abs() < 1e-4);
        assert!((mu - (0.1 + 0.01)).abs() < 1e-12);
        let (mu_log, _) = drift_vol_from_log_returns(&[0.0, 0.2], 1.0, DriftConvention::Log).unwrap();
        assert!((mu_log - 0.1).abs() < 1e-12);
        assert!(drift_vol_from_log_returns(&[0.1], 1.0, DriftConvention::Log).is_err());
    }

    fn snapshot(year: i32, firms: impl IntoIterator<Item = (String, f64)>) -> Snapshot {
        let records = firms
            .into_iter()
            .map(|(n, a)| FirmRecord::new(n, "Banking", a))
            .collect();
        Snapshot::new(year, records).unwrap()
    }

    #[test]
    fn uniform_growth_has_no_volatility() {
        let prev = snapshot(2012, (0..40).map(|i| (format!("f{i}"), 10.0 + i as f64)));
        let next = snapshot(
            2013,
            (0..40).map(|i| (format!("f{i}"), (10.0 + i as f64) * 0.1f64.exp())),
        );
        let e = estimate_drift_vol(&prev, &next, DriftConvention::Geometric).unwrap();
        assert_eq!(e.n_matched, 40);
        assert!(e.sigma_hat < 1e-12);
        assert!((e.mu_hat - 0.1).abs() < 1e-12);
    }

    #[test]
    fn drift_vol_matching_rules() {
        let mut a: Vec<(String, f64)> = (0..35).map(|i| (format!("f{i}"), 5.0)).collect();
        a.push(("dup".into(), 1.0));
        a.push(("dup".into(), 2.0));
        let mut b: Vec<(String, f64)> = (0..35).map(|i| (format!("f{i}"), 10.0)).collect();
        b.push(("dup".into(), 3.0));
        let e = estimate_drift_vol(&snapshot(2010, a.clone()), &snapshot(2012, b), DriftConvention::Log).unwrap();
        assert_eq!(e.n_matched, 35);
        assert!((e.mu_hat - 2f64.ln() / 2.0).abs() < 1e-12);

        let few = snapshot(2013, (0..10).map(|i| (format!("f{i}"), 10.0)));
        assert!(matches!(
            estimate_drift_vol(&snapshot(2010, a.clone()), &few, DriftConvention::Log),
            Err(Error::TooFewMatches {
                found: 10,
                need: MIN_MATCHED
            })
        ));
        assert!(estimate_drift_vol(&snapshot(2010, a.clone()), &snapshot(2010, a), DriftConvention::Log).is_err());
    }

    fn small_config(seed: u64) -> SimConfig {
        SimConfig {
            n_firms_init: 400,
            dt: 0.01,
            burn_in: 60.0,
            horizon: 1.0,
            seed,
            keep_top: 100,
            drift_convention: DriftConvention::Geometric,
        }
    }

    #[test]
    fn params_serde_defaults() {
        let p: PrgParams = serde_json::from_str(r#"{"mu":0.09,"sigma":0.17,"h":0.08}"#).unwrap();
        assert_eq!(p, PrgParams::new(0.09, 0.17, 0.08));
        assert_eq!(p.effective_nu(&small_config(0)), 0.08 * 400.0);
    }

    #[test]
    fn validation_errors() {
        let p = PrgParams::new(MU, SIGMA, H);
        assert!(matches!(
            simulate(
                &p.with_lambda(60.0),
                &SimConfig {
                    dt: 0.01,
                    ..small_config(0)
                }
            ),
            Err(Error::StepTooCoarse {
                rate_name: "lambda",
                ..
            })
        ));
        assert!(simulate(
            &p,
            &SimConfig {
                dt: 0.2,
                ..small_config(0)
            }
        )
        .is_err());
        assert!(simulate(&PrgParams { sigma: 0.0, ..p }, &small_config(0)).is_err());
        assert!(simulate(&PrgParams { epsilon: 1.0, ..p }, &small_config(0)).is_err());
        assert!(simulate(
            &p,
            &SimConfig {
                keep_top: 0,
                ..small_config(0)
            }
        )
        .is_err());
    }

    #[test]
    fn extinction_without_entry() {
        let p = PrgParams::new(MU, SIGMA, 0.5).with_nu(0.0);
        let cfg = SimConfig {
            n_firms_init: 5,
            ..small_config(1)
        };
        assert!(matches!(simulate(&p, &cfg), Err(Error::Extinct { .. })));
    }

    #[test]
    fn relaxation_heuristic() {
        assert_eq!(SimConfig::recommended_burn_in(0.08), Some(625.0));
        assert_eq!(SimConfig::recommended_burn_in(2.0), Some(50.0));
        assert_eq!(SimConfig::recommended_burn_in(0.0), None);
        let p = PrgParams::new(MU, SIGMA, 0.08);
        assert!(SimConfig::default().relaxation_warning(&p).is_some());
        assert!(SimConfig {
            burn_in: 700.0,
            ..SimConfig::default()
        }
        .relaxation_warning(&p)
        .is_none());
    }

    #[test]
    fn degenerate_volatility_keeps_sizes_at_entry() {
        let p = PrgParams::new(0.0, 1e-9, H).with_shedding(0.0, 0.1);
        let cfg = SimConfig {
            drift_convention: DriftConvention::Log,
            ..small_config(3)
        };
        let r = simulate(&p, &cfg).unwrap();
        assert!(r.sizes_top.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn replicas_are_deterministic_and_distinct() {
        let p = PrgParams::new(MU, SIGMA, H).with_shedding(8.0, 0.1);
        let cfg = small_config(42);
        let a = simulate_replica(&p, &cfg, 3).unwrap();
        let b = simulate_replica(&p, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_replica(&p, &cfg, 4).unwrap();
        assert_ne!(a.sizes_top, c.sizes_top);
        assert_eq!(simulate(&p, &cfg).unwrap(), simulate_replica(&p, &cfg, 0).unwrap());
    }

    #[test]
    fn output_is_sorted_and_truncated() {
        let r = simulate(&PrgParams::new(MU, SIGMA, H), &small_config(5)).unwrap();
        assert_eq!(r.sizes_top.len(), 100);
        assert!(r.sizes_top.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.population >= 100);
        assert_eq!(r.n_events.sheddings, 0);
        assert_eq!(r.shed_total, 0.0);
    }

    #[test]
    fn shedding_conserves_mass() {
        let p = PrgParams::new(MU, SIGMA, H).with_shedding(20.0, 0.1);
        let cfg = SimConfig {
            horizon: 5.0,
            ..small_config(9)
        };
        let (r, events) = simulate_traced(&p, &cfg).unwrap();
        assert!(!events.is_empty());
        for e in &events {
            assert!((e.size_before - e.size_after - e.amount).abs() <= 1e-12 * e.size_before);
            assert!((e.amount - 0.1 * e.size_before).abs() <= 1e-12 * e.size_before);
        }
        let burn_steps = (cfg.burn_in / cfg.dt).round() as u64;
        let window: Vec<_> = events.iter().filter(|e| e.step > burn_steps).collect();
        assert_eq!(window.len() as u64, r.n_events.sheddings);
        let total: f64 = window.iter().map(|e| e.amount).sum();
        assert!((total - r.shed_total).abs() <= 1e-9 * total);
        // about lambda * horizon events in the window
        assert!((window.len() as f64 - 100.0).abs() < 5.0 * 10.0);
    }

    #[test]
    fn stationary_population() {
        let p = PrgParams::new(MU, SIGMA, H);
        let n = 400.0;
        let mut total = 0.0;
        for seed in 0..100 {
            let r = simulate(&p, &small_config(seed)).unwrap();
            assert!((r.population as f64 - n).abs() < 5.0 * n.sqrt(), "{}", r.population);
            total += r.population as f64;
        }
        assert!((total / 100.0 - n).abs() < 3.0 * n.sqrt() / 10.0);
    }

    /// Plain step-by-step simulation of the same dynamics.
    fn reference_run(p: &PrgParams, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, usize) {
        let drift = cfg.drift_convention.log_drift(p.mu, p.sigma) * cfg.dt;
        let vol = p.sigma * cfg.dt.sqrt();
        let entries = Poisson::new(p.effective_nu(cfg) * cfg.dt).unwrap();
        let (burn, total) = cfg.steps();
        let mut firms = vec![0.0f64; cfg.n_firms_init];
        let mut shed = 0.0;
        for t in 1..=total {
            for x in firms.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += drift + vol * z;
            }
            firms.retain(|_| rng.random::<f64>() >= p.h * cfg.dt);
            let k = entries.sample(rng) as usize;
            firms.extend(std::iter::repeat_n(0.0, k));
            if rng.random::<f64>() < p.lambda * cfg.dt {
                let i = (0..firms.len()).fold(0, |b, i| if firms[i] > firms[b] { i } else { b });
                let before = firms[i].exp();
                firms[i] = (before * (1.0 - p.epsilon)).ln();
                if t > burn {
                    shed += p.epsilon * before;
                }
            }
        }
        let mut sizes: Vec<f64> = firms.iter().map(|x| x.exp()).collect();
        sizes.sort_by(|a, b| b.total_cmp(a));
        let pop = sizes.len();
        sizes.truncate(cfg.keep_top);
        (sizes, shed, pop)
    }

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    #[test]
    fn matches_step_by_step_reference() {
        let p = PrgParams::new(MU, SIGMA, 0.15).with_shedding(10.0, 0.1);
        let cfg = SimConfig {
            n_firms_init: 150,
            dt: 0.02,
            burn_in: 40.0,
            horizon: 2.0,
            seed: 11,
            keep_top: 20,
            drift_convention: DriftConvention::Geometric,
        };
        let reps = 300;
        let mut ref_rng = ChaCha8Rng::seed_from_u64(99);
        let mut stats = [
            [Vec::new(), Vec::new()],
            [Vec::new(), Vec::new()],
            [Vec::new(), Vec::new()],
            [Vec::new(), Vec::new()],
        ];
        for r in 0..reps {
            let fast = simulate_replica(&p, &cfg, r).unwrap();
            let (slow, shed, pop) = reference_run(&p, &cfg, &mut ref_rng);
            for (which, (sizes, shed, pop)) in [(fast.sizes_top, fast.shed_total, fast.population), (slow, shed, pop)]
                .into_iter()
                .enumerate()
            {
                stats[0][which].push(sizes[0].ln());
                stats[1][which].push(sizes[9].ln());
                stats[2][which].push(shed);
                stats[3][which].push(pop as f64);
            }
        }
        for (name, s) in ["log S1", "log S10", "shed", "population"].iter().zip(&stats) {
            let (m0, s0) = mean_sd(&s[0]);
            let (m1, s1) = mean_sd(&s[1]);
            let se = ((s0 * s0 + s1 * s1) / reps as f64).sqrt();
            assert!(
                (m0 - m1).abs() < 4.5 * se,
                "{name}: engine {m0} vs reference {m1} (se {se})"
            );
        }
    }
}

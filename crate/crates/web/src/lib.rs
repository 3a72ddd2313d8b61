//! Browser demo: three interactive operations over the core library.
//!
//! Each entry point returns a JSON string the page draws on a canvas.
//! The plain functions are native Rust and tested as such; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use shadowtail::prgsim::{gamma_from_params, h_from_gamma, simulate, PrgParams, SimConfig};
use shadowtail::sbindex::compute_index;
use shadowtail::tailfit::{empirical_ccdf, fit_pareto, CcdfPoint, ParetoFit};
use wasm_bindgen::prelude::*;

/// Points kept per plotted curve.
const PLOT_POINTS: usize = 200;

type DemoResult = Result<String, String>;

fn to_json(v: &impl Serialize) -> DemoResult {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Log-spaced subset of a rank-ordered list, always keeping the first and last.
fn thin<T: Copy>(xs: &[T]) -> Vec<T> {
    if xs.len() <= PLOT_POINTS {
        return xs.to_vec();
    }
    let last = (xs.len() - 1) as f64;
    let mut idx: Vec<usize> = (0..PLOT_POINTS)
        .map(|i| (last.powf(i as f64 / (PLOT_POINTS - 1) as f64)).round() as usize)
        .collect();
    idx.insert(0, 0);
    idx.dedup();
    idx.into_iter().map(|i| xs[i]).collect()
}

/// Pareto sample with exponent `gamma` above 1, descending.
fn pareto_sample(rng: &mut ChaCha8Rng, n: usize, gamma: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / gamma)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[derive(Serialize)]
struct TailDemo {
    ccdf: Vec<CcdfPoint>,
    fit: ParetoFit,
    i_sb: f64,
    band_low: f64,
    band_high: f64,
    /// Mass taken off the top when the tail was cut.
    removed_mass: f64,
}

/// Draws `n` Pareto sizes, flattens the `cut` largest onto the next one,
/// fits the exponent away from the top and measures the missing mass of
/// the `n_top` largest.
pub fn tail_demo(gamma: f64, n: usize, cut: usize, n_top: usize, seed: u64) -> DemoResult {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(format!("gamma must be positive, got {gamma}"));
    }
    if n < 100 || n_top == 0 || cut >= n / 4 || n_top > n / 4 {
        return Err("need n >= 100, 0 < n_top <= n/4 and cut < n/4".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = pareto_sample(&mut rng, n, gamma);
    let floor = sizes[cut];
    let removed_mass = sizes[..cut].iter().map(|s| s - floor).sum();
    sizes[..cut].fill(floor);

    let points = empirical_ccdf(&sizes).map_err(|e| e.to_string())?;
    let top = n_top.max(cut + 1);
    let fit = fit_pareto(&points, sizes[n / 2], sizes[(2 * top).min(n / 4)]).map_err(|e| e.to_string())?;
    let r = compute_index(&sizes, &fit, n_top).map_err(|e| e.to_string())?;
    to_json(&TailDemo {
        ccdf: thin(&points),
        fit,
        i_sb: r.i_sb,
        band_low: r.band_low,
        band_high: r.band_high,
        removed_mass,
    })
}

#[derive(Serialize)]
struct GrowthDemo {
    gamma: f64,
    h: f64,
    /// `(rank, size)` without shedding.
    free: Vec<(usize, f64)>,
    /// `(rank, size)` with shedding, same random draws.
    shed: Vec<(usize, f64)>,
    shed_total: f64,
}

fn ranked(sizes: &[f64]) -> Vec<(usize, f64)> {
    let all: Vec<(usize, f64)> = sizes.iter().enumerate().map(|(i, &s)| (i + 1, s)).collect();
    thin(&all)
}

/// Grows `n_firms` firms for `years` with exit rate set so the stationary
/// exponent is `gamma`, once freely and once shedding the top firm at rate
/// `lambda`.
pub fn growth_demo(mu: f64, sigma: f64, gamma: f64, lambda: f64, n_firms: usize, years: f64, seed: u64) -> DemoResult {
    let h = h_from_gamma(gamma, mu, sigma).map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        n_firms_init: n_firms,
        burn_in: years,
        horizon: 1.0,
        seed,
        keep_top: 1000.min(n_firms),
        ..SimConfig::default()
    };
    let base = PrgParams::new(mu, sigma, h);
    let free = simulate(&base, &cfg).map_err(|e| e.to_string())?;
    let shed = simulate(&base.with_lambda(lambda), &cfg).map_err(|e| e.to_string())?;
    to_json(&GrowthDemo {
        gamma,
        h,
        free: ranked(&free.sizes_top),
        shed: ranked(&shed.sizes_top),
        shed_total: shed.shed_total,
    })
}

/// Stationary exponent against exit rate on `[0, h_max]`.
pub fn gamma_curve(mu: f64, sigma: f64, h_max: f64, steps: usize) -> DemoResult {
    if !(h_max > 0.0) || steps < 2 {
        return Err("need h_max > 0 and at least 2 steps".into());
    }
    let curve = (0..steps)
        .map(|i| {
            let h = h_max * i as f64 / (steps - 1) as f64;
            gamma_from_params(mu, sigma, h).map(|g| (h, g))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    to_json(&curve)
}

#[wasm_bindgen(js_name = tailDemo)]
pub fn tail_demo_js(gamma: f64, n: usize, cut: usize, n_top: usize, seed: u32) -> Result<String, JsValue> {
    tail_demo(gamma, n, cut, n_top, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = growthDemo)]
pub fn growth_demo_js(
    mu: f64,
    sigma: f64,
    gamma: f64,
    lambda: f64,
    n_firms: usize,
    years: f64,
    seed: u32,
) -> Result<String, JsValue> {
    growth_demo(mu, sigma, gamma, lambda, n_firms, years, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = gammaCurve)]
pub fn gamma_curve_js(mu: f64, sigma: f64, h_max: f64, steps: usize) -> Result<String, JsValue> {
    gamma_curve(mu, sigma, h_max, steps).map_err(|e| JsValue::from_str(&e))
}

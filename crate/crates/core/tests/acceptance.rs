//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N [PASS|FAIL]` line before asserting.
//!
//! Criteria run one at a time under a shared lock so that the reported
//! runtimes are not inflated by other criteria running concurrently.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowtail::calibrate::{calibrate_lambda, calibrate_lambda_many, zk_objective, CalibrationConfig};
use shadowtail::dataset::{load_snapshot, sector_summary, SectorClassifier};
use shadowtail::kernelreg::{nw_regress, Bandwidth, XyPoint};
use shadowtail::prgsim::{gamma_from_params, h_from_gamma, simulate_replica, PrgParams, SimConfig};
use shadowtail::sbindex::{compute_index, confidence_band};
use shadowtail::tailfit::{empirical_ccdf, fit_pareto, ParetoFit};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{verdict}] {name}: {detail}");
    assert!(pass, "criterion {id} failed: {detail}");
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (
        elapsed < limit,
        format!("{:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

/// Table of yearly model parameters: (year, mu, sigma, gamma, h).
const YEARLY: [(i32, f64, f64, f64, f64); 8] = [
    (2005, 0.12, 0.20, 0.89, 0.10),
    (2006, 0.10, 0.24, 0.87, 0.09),
    (2007, 0.15, 0.22, 0.86, 0.13),
    (2008, 0.11, 0.28, 0.90, 0.10),
    (2009, 0.04, 0.21, 0.89, 0.04),
    (2010, 0.11, 0.23, 0.90, 0.10),
    (2011, 0.10, 0.17, 0.91, 0.09),
    (2012, 0.09, 0.17, 0.90, 0.08),
];

const MU_2012: f64 = 0.09;
const SIGMA_2012: f64 = 0.17;
const GAMMA_2012: f64 = 0.90;

fn params_2012() -> PrgParams {
    PrgParams::new(
        MU_2012,
        SIGMA_2012,
        h_from_gamma(GAMMA_2012, MU_2012, SIGMA_2012).unwrap(),
    )
}

/// `n` i.i.d. draws from `Prob{S >= x} = x^-gamma`, `x >= 1`, descending.
fn pareto_sample(seed: u64, n: usize, gamma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / gamma)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Fit over ranks `lo..=hi` (1-based) of a descending list.
fn fit_ranks(desc: &[f64], lo: usize, hi: usize) -> ParetoFit {
    fit_pareto(&empirical_ccdf(desc).unwrap(), desc[hi - 1], desc[lo - 1]).unwrap()
}

#[test]
fn criterion_01_exponent_round_trip() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let gamma = rng.random_range(0.2..4.0);
        let mu = rng.random_range(-0.2..0.3);
        let sigma = rng.random_range(0.05..0.6);
        let a = 1.0 - 2.0 * mu / (sigma * sigma);
        if gamma < a {
            // no non-negative exit rate produces this exponent
            continue;
        }
        let back = gamma_from_params(mu, sigma, h_from_gamma(gamma, mu, sigma).unwrap()).unwrap();
        worst = worst.max((back - gamma).abs());
        n += 1;
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    report(
        1,
        "exponent round trip",
        worst <= 1e-12 && fast,
        format!("max |error| {worst:.1e} over 1000 triples, {time}"),
    );
}

#[test]
fn criterion_02_yearly_exit_rates() {
    let _g = serial();
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (year, mu, sigma, gamma, h) in YEARLY {
        let got = h_from_gamma(gamma, mu, sigma).unwrap();
        worst = worst.max((got - h).abs());
        rows.push(format!("{year}:{got:.4}"));
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    report(
        2,
        "yearly exit rates",
        worst <= 0.01 && fast,
        format!("max |h - printed| {worst:.4} [{}], {time}", rows.join(" ")),
    );
}

#[test]
fn criterion_03_pareto_fit_oracle() {
    let _g = serial();
    let t = Instant::now();
    let gammas: Vec<f64> = (0..100)
        .map(|seed| fit_ranks(&pareto_sample(seed, 2000, 0.9), 100, 1500).gamma_hat)
        .collect();
    let mean = gammas.iter().sum::<f64>() / 100.0;
    let worst = gammas.iter().map(|g| (g - 0.9).abs()).fold(0.0, f64::max);
    let outside = gammas.iter().filter(|g| (*g - 0.9).abs() > 0.05).count();
    let (fast, time) = within(t.elapsed(), Duration::from_secs(10));
    report(
        3,
        "pareto fit oracle",
        (mean - 0.9).abs() <= 0.02 && worst <= 0.05 && fast,
        format!("mean {mean:.4}, max |dev| {worst:.4}, {outside}/100 seeds outside +-0.05, {time}"),
    );
}

/// A Pareto sample whose 19 largest values are lowered to the 20th.
struct Capped {
    sizes: Vec<f64>,
    removed: f64,
    fit: ParetoFit,
}

fn capped(seed: u64) -> Capped {
    let mut sizes = pareto_sample(seed, 2000, 0.9);
    let cap = sizes[19];
    let removed = sizes[..19].iter().map(|s| s - cap).sum();
    for s in &mut sizes[..19] {
        *s = cap;
    }
    let fit = fit_ranks(&sizes, 100, 1500);
    Capped { sizes, removed, fit }
}

#[test]
fn criterion_04_index_oracle() {
    let _g = serial();
    let t = Instant::now();
    let (mut close, mut covered) = (0, 0);
    for seed in 0..100 {
        let c = capped(seed);
        let r = compute_index(&c.sizes, &c.fit, 100).unwrap();
        if (r.i_sb - c.removed).abs() <= 0.1 * c.removed {
            close += 1;
        }
        if r.band_low <= c.removed && c.removed <= r.band_high {
            covered += 1;
        }
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(30));
    report(
        4,
        "index oracle",
        close >= 90 && covered >= 90 && fast,
        format!("within 10%: {close}/100, band covers: {covered}/100 (need 90 each), {time}"),
    );
}

#[test]
fn criterion_05_top_count_insensitivity() {
    let _g = serial();
    let mut worst: f64 = 0.0;
    let mut over = 0;
    for seed in 0..100 {
        let c = capped(seed);
        let values: Vec<f64> = (1..=c.sizes.len())
            .filter(|&n| c.fit.s_minus <= c.sizes[n - 1] && c.sizes[n - 1] <= c.fit.s_plus)
            .map(|n| compute_index(&c.sizes, &c.fit, n).unwrap().i_sb)
            .collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mid = 0.5 * (lo + hi);
        let spread = (hi - lo) / mid.abs();
        worst = worst.max(spread);
        over += usize::from(spread >= 0.02);
    }
    report(
        5,
        "top-count insensitivity",
        worst < 0.02,
        format!(
            "largest relative spread over admissible N {:.2}%; {over}/100 seeds at or above 2%",
            100.0 * worst
        ),
    );
}

fn sim_config(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn criterion_06_simulator_matches_theory() {
    let _g = serial();
    let t = Instant::now();
    let p = params_2012();
    let theory = p.gamma().unwrap();
    let gammas: Vec<f64> = (0..20)
        .map(|seed| {
            let r = simulate_replica(&p, &sim_config(seed), 0).unwrap();
            fit_ranks(&r.sizes_top, 20, r.sizes_top.len()).gamma_hat
        })
        .collect();
    let mean = gammas.iter().sum::<f64>() / 20.0;
    let worst = gammas.iter().map(|g| (g - 0.9).abs()).fold(0.0, f64::max);
    let outside = gammas.iter().filter(|g| (*g - 0.9).abs() > 0.05).count();
    let (fast, time) = within(t.elapsed(), Duration::from_secs(120));
    report(
        6,
        "simulator matches theory",
        (mean - 0.9).abs() <= 0.05 && fast,
        format!(
            "theory {theory:.4}, mean fit over 20 seeds {mean:.4}; single seeds: max |dev| {worst:.4}, {outside}/20 outside +-0.05; {time}"
        ),
    );
}

#[test]
fn criterion_07_interruption_flattens_top() {
    let _g = serial();
    let base = params_2012();
    let shed = base.with_shedding(12.0, 0.1);
    let (mut plain, mut cut) = (0.0, 0.0);
    for seed in 0..20 {
        let a = simulate_replica(&base, &sim_config(seed), 0).unwrap().sizes_top;
        let b = simulate_replica(&shed, &sim_config(seed), 0).unwrap().sizes_top;
        plain += a[0] / a[19] / 20.0;
        cut += b[0] / b[19] / 20.0;
    }
    report(
        7,
        "interruption flattens top",
        cut <= 0.5 * plain,
        format!(
            "mean S1/S20: {plain:.2} without shedding, {cut:.3} with lambda=12 ({:.1}% lower)",
            100.0 * (1.0 - cut / plain)
        ),
    );
}

fn desk_config(seed: u64) -> SimConfig {
    SimConfig {
        n_firms_init: 5000,
        keep_top: 500,
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn criterion_08_calibration_self_consistency() {
    let _g = serial();
    let t = Instant::now();
    let base = params_2012();
    let grid: Vec<f64> = (0..=30).map(f64::from).collect();
    let cfg = CalibrationConfig {
        sim: desk_config(2024),
        n_replicas: 100,
        n_ranks: 500,
    };

    // observed lists come from seeds disjoint from the calibration seed
    let observed = |lambda: f64, trial: u64| {
        simulate_replica(&base.with_lambda(lambda), &desk_config(9000 + trial), 0)
            .unwrap()
            .sizes_top
    };
    let (n12, n0) = (10, 20);
    let mut lists: Vec<Vec<f64>> = (0..n12).map(|i| observed(12.0, i)).collect();
    lists.extend((0..n0).map(|i| observed(0.0, 100 + i)));
    let refs: Vec<&[f64]> = lists.iter().map(Vec::as_slice).collect();
    let results = calibrate_lambda_many(&base, &cfg, &refs, &grid).unwrap();

    let at12: Vec<f64> = results[..n12 as usize].iter().map(|r| r.lambda_hat).collect();
    let at0: Vec<f64> = results[n12 as usize..].iter().map(|r| r.lambda_hat).collect();
    let in_band = at12.iter().filter(|l| (8.0..=16.0).contains(*l)).count();
    let zero_hits = at0.iter().filter(|&&l| l == 0.0).count();
    let (fast, time) = within(t.elapsed(), Duration::from_secs(600));
    report(
        8,
        "calibration self-consistency",
        in_band == at12.len() && zero_hits * 10 >= 9 * at0.len() && fast,
        format!(
            "lambda*=12 -> in [8,16] for {in_band}/{} datasets {at12:?}; lambda*=0 -> 0 in {zero_hits}/{} trials {at0:?}; {time}",
            at12.len(),
            at0.len()
        ),
    );
}

#[test]
fn criterion_09_flux_invariance() {
    let _g = serial();
    let t = Instant::now();
    let base = params_2012();
    let sim = SimConfig {
        dt: 0.0025,
        ..desk_config(77)
    };
    let observed = simulate_replica(&base.with_shedding(12.0, 0.1), &SimConfig { seed: 31_337, ..sim }, 0)
        .unwrap()
        .sizes_top;
    let cfg = CalibrationConfig {
        sim,
        n_replicas: 100,
        n_ranks: 500,
    };
    // a 0.1 step resolves a 25% difference around a flux of 1
    let fluxes: Vec<f64> = (4..=20).map(|i| 0.1 * f64::from(i)).collect();
    let mut products = Vec::new();
    for eps in [0.02, 0.05, 0.1] {
        let p = PrgParams { epsilon: eps, ..base };
        let grid: Vec<f64> = fluxes.iter().map(|f| f / eps).collect();
        let r = calibrate_lambda(&p, &cfg, &observed, &grid).unwrap();
        products.push(r.flux);
    }
    let mut pairwise = true;
    for i in 0..3 {
        for j in 0..3 {
            pairwise &= products[i] <= 1.25 * products[j];
        }
    }
    // the lambda band [8, 16] of the calibration criterion, times epsilon = 0.1
    let near = products.iter().all(|f| (0.8..=1.6).contains(f));
    report(
        9,
        "flux invariance",
        pairwise && near,
        format!(
            "eps*lambda_hat at eps 0.02/0.05/0.1 = {products:.3?} (pairwise within 25%: {pairwise}, all in [0.8, 1.6]: {near}), {:.1}s",
            t.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_objective_scale_invariance() {
    let _g = serial();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let sims: Vec<Vec<f64>> = (0..5).map(|r| pareto_sample(seed * 10 + r, 200, 0.9)).collect();
        let obs = pareto_sample(1000 + seed, 200, 0.9);
        let scaled: Vec<Vec<f64>> = sims.iter().map(|v| v.iter().map(|s| s * 10.0).collect()).collect();
        let a = zk_objective(&sims, &obs, 200).unwrap().mse;
        let b = zk_objective(&scaled, &obs, 200).unwrap().mse;
        worst = worst.max((a - b).abs());
    }
    report(
        10,
        "objective scale invariance",
        worst <= 1e-12,
        format!("max |mse difference| {worst:.1e} over 50 cases"),
    );
}

#[test]
fn criterion_11_kernel_regression() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs: Vec<f64> = (0..500).map(|_| rng.random_range(2.0..8.0)).collect();
    let flat: Vec<XyPoint> = xs.iter().map(|&x| XyPoint { x, y: 0.013 }).collect();
    let c = nw_regress(&flat, Bandwidth::Auto, 100).unwrap();
    let exact = c.estimate.iter().all(|&m| m == 0.013);

    let noise = rand_distr::Normal::new(0.0, 0.02).unwrap();
    let noisy: Vec<XyPoint> = xs
        .iter()
        .map(|&x| XyPoint {
            x,
            y: 0.01 + rng.sample(noise),
        })
        .collect();
    let c = nw_regress(&noisy, Bandwidth::Auto, 100).unwrap();
    let inside = c
        .band_low
        .iter()
        .zip(&c.band_high)
        .filter(|(l, h)| **l <= 0.01 && 0.01 <= **h)
        .count();
    report(
        11,
        "kernel regression",
        exact && inside >= 95,
        format!("constant reproduced exactly: {exact}; truth inside band at {inside}/100 grid points"),
    );
}

/// Published ranges and exponents: (list year, S-, S+, gamma_hat, gamma_hat_fin).
const PUBLISHED_FITS: [(i32, f64, f64, f64, f64); 9] = [
    (2004, 14.88, 665.14, 0.926, 0.710),
    (2006, 11.02, 897.85, 0.889, 0.678),
    (2007, 12.18, 992.27, 0.871, 0.645),
    (2008, 12.18, 1096.63, 0.864, 0.655),
    (2009, 14.88, 1339.43, 0.899, 0.672),
    (2010, 14.88, 1339.43, 0.891, 0.674),
    (2011, 18.17, 1339.43, 0.899, 0.669),
    (2012, 24.53, 1635.98, 0.905, 0.648),
    (2013, 24.53, 1998.20, 0.897, 0.627),
];

/// Checks against real yearly lists when `SHADOWTAIL_DATA_DIR` holds
/// `<list year>.csv` files with sizes in billions. Without them there is
/// nothing to compare against and the criterion is reported as skipped.
#[test]
fn criterion_12_external_data() {
    let _g = serial();
    let Some(dir) = std::env::var_os("SHADOWTAIL_DATA_DIR") else {
        println!("criterion 12 [SKIP] external data: SHADOWTAIL_DATA_DIR not set; synthetic fixtures only");
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let classifier = SectorClassifier::default();
    let mut failures = Vec::new();
    let mut checked = 0;
    for (year, s_minus, s_plus, gamma, gamma_fin) in PUBLISHED_FITS {
        let path = dir.join(format!("{year}.csv"));
        if !path.exists() {
            continue;
        }
        let snap = load_snapshot(&path, year).unwrap().snapshot;
        let all = fit_pareto(&empirical_ccdf(&snap.sizes_desc()).unwrap(), s_minus, s_plus).unwrap();
        let fin_sizes = snap.filter(|f| classifier.is_financial(f)).unwrap().sizes_desc();
        let fin = fit_pareto(&empirical_ccdf(&fin_sizes).unwrap(), s_minus, s_plus).unwrap();
        for (what, got, want) in [("gamma", all.gamma_hat, gamma), ("gamma_fin", fin.gamma_hat, gamma_fin)] {
            if (got - want).abs() > 0.01 {
                failures.push(format!("{year} {what} {got:.3} vs {want}"));
            }
        }
        let share = sector_summary(&snap, &classifier).financial_share.assets;
        let expected = match year {
            2004 => Some(0.70),
            2013 => Some(0.87),
            _ => None,
        };
        if let Some(e) = expected {
            if (share - e).abs() > 0.02 {
                failures.push(format!("{year} financial asset share {share:.3} vs {e}"));
            }
        }
        let band = confidence_band(&snap.sizes_desc(), &all, 1000.min(snap.len()));
        if band.is_err() {
            failures.push(format!("{year} index band failed: {band:?}"));
        }
        checked += 1;
    }
    report(
        12,
        "external data",
        checked > 0 && failures.is_empty(),
        format!(
            "{checked} yearly files checked; {}",
            if failures.is_empty() {
                "all within tolerance".into()
            } else {
                failures.join("; ")
            }
        ),
    );
}

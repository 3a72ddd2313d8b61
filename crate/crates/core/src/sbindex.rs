//! Missing top-tail mass relative to a fitted power law.
//!
//! The theoretical size of the k-th largest firm inverts the fitted CCDF at
//! the empirical level `k/M`: `S_hat[k] = (c_hat * M / k)^(1 / gamma_hat)`.
//! The index is the signed sum `sum_{k<=N} (S_hat[k] - S[k])`; ranks where the
//! observed firm sits above the line contribute negatively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tailfit::ParetoFit;

pub const DEFAULT_N_TOP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankGap {
    pub rank: usize,
    pub observed: f64,
    pub theoretical: f64,
}

impl RankGap {
    pub fn gap(&self) -> f64 {
        self.theoretical - self.observed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbIndexResult {
    /// Same unit as the input sizes.
    pub i_sb: f64,
    pub n_top: usize,
    pub per_rank_gap: Vec<RankGap>,
    pub band_low: f64,
    pub band_high: f64,
}

fn theoretical_with(gamma: f64, log_c: f64, m_total: usize, n_top: usize) -> Vec<f64> {
    let log_m = (m_total as f64).ln();
    (1..=n_top)
        .map(|k| ((log_c + log_m - (k as f64).ln()) / gamma).exp())
        .collect()
}

pub fn theoretical_sizes(fit: &ParetoFit, n_top: usize) -> Result<Vec<f64>> {
    if !(fit.gamma_hat > 0.0) {
        return Err(Error::NonPositiveExponent(fit.gamma_hat));
    }
    if n_top > fit.m_total {
        return Err(Error::TopExceedsSize {
            n_top,
            available: fit.m_total,
        });
    }
    Ok(theoretical_with(fit.gamma_hat, fit.log_c_hat, fit.m_total, n_top))
}

fn sorted_desc(sizes: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::NonPositiveSize(bad));
    }
    let mut v = sizes.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

fn check_n_top(n_top: usize, available: usize) -> Result<()> {
    if n_top == 0 {
        return Err(Error::InvalidParameter("n_top must be at least 1".into()));
    }
    if n_top > available {
        return Err(Error::TopExceedsSize { n_top, available });
    }
    Ok(())
}

/// Index value for given coefficients against sizes already sorted descending.
fn index_value(desc: &[f64], gamma: f64, log_c: f64, m_total: usize, n_top: usize) -> f64 {
    theoretical_with(gamma, log_c, m_total, n_top)
        .iter()
        .zip(desc)
        .map(|(t, s)| t - s)
        .sum()
}

/// Computes the index over the `n_top` largest of `sizes` (any order).
pub fn compute_index(sizes: &[f64], fit: &ParetoFit, n_top: usize) -> Result<SbIndexResult> {
    let desc = sorted_desc(sizes)?;
    check_n_top(n_top, desc.len())?;
    let theo = theoretical_sizes(fit, n_top)?;
    let per_rank_gap: Vec<RankGap> = theo
        .iter()
        .zip(&desc)
        .enumerate()
        .map(|(i, (&t, &s))| RankGap {
            rank: i + 1,
            observed: s,
            theoretical: t,
        })
        .collect();
    let i_sb = per_rank_gap.iter().map(RankGap::gap).sum();
    let (band_low, band_high) = band_from_sorted(&desc, fit, n_top, i_sb)?;
    Ok(SbIndexResult {
        i_sb,
        n_top,
        per_rank_gap,
        band_low,
        band_high,
    })
}

/// Range of the index over the four corners `gamma_hat +- 2 se_gamma`,
/// `log_c_hat +- 2 se_log_c`, widened to include the central value.
pub fn confidence_band(sizes: &[f64], fit: &ParetoFit, n_top: usize) -> Result<(f64, f64)> {
    let desc = sorted_desc(sizes)?;
    check_n_top(n_top, desc.len())?;
    let central = index_value(&desc, fit.gamma_hat, fit.log_c_hat, fit.m_total, n_top);
    band_from_sorted(&desc, fit, n_top, central)
}

fn band_from_sorted(desc: &[f64], fit: &ParetoFit, n_top: usize, central: f64) -> Result<(f64, f64)> {
    let (dg, dc) = (2.0 * fit.se_gamma, 2.0 * fit.se_log_c);
    if fit.gamma_hat - dg <= 0.0 {
        return Err(Error::NonPositiveExponent(fit.gamma_hat - dg));
    }
    let mut lo = central;
    let mut hi = central;
    for g in [fit.gamma_hat - dg, fit.gamma_hat + dg] {
        for c in [fit.log_c_hat - dc, fit.log_c_hat + dc] {
            let v = index_value(desc, g, c, fit.m_total, n_top);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((lo, hi))
}

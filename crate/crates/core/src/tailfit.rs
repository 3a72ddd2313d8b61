//! Empirical CCDF and log-log least-squares estimation of the Pareto exponent.
//!
//! For `M` sizes sorted descending, the k-th largest gets CCDF level `k/M`.
//! The tail model is `Prob{S >= x} = c * x^(-gamma)`, fitted by ordinary
//! least squares of `ln ccdf` on `ln size` over an inclusive size range.
//!
//! The standard errors are the textbook OLS ones. CCDF points are serially
//! correlated, so these understate the sampling uncertainty of `gamma_hat`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_FIT_POINTS: usize = 3;
pub const MIN_SUGGEST_POINTS: usize = 30;
/// Spacing, in natural log units, of the candidate endpoints for [`suggest_range`].
pub const RANGE_GRID_STEP: f64 = 0.1;
pub const DEFAULT_MAX_RMS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    pub size: f64,
    pub ccdf: f64,
    pub rank: usize,
}

pub fn empirical_ccdf(sizes: &[f64]) -> Result<Vec<CcdfPoint>> {
    if sizes.is_empty() {
        return Err(Error::EmptyInput("no sizes"));
    }
    if let Some(&bad) = sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::NonPositiveSize(bad));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, size)| CcdfPoint {
            size,
            ccdf: (i + 1) as f64 / m,
            rank: i + 1,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoFit {
    pub gamma_hat: f64,
    pub log_c_hat: f64,
    pub s_minus: f64,
    pub s_plus: f64,
    pub se_gamma: f64,
    /// Standard error of `log_c_hat`.
    pub se_log_c: f64,
    pub n_points: usize,
    /// Number of points in the CCDF the fit was taken from.
    pub m_total: usize,
    /// Root mean square of the log-CCDF residuals in range.
    pub residual_rms: f64,
}

impl ParetoFit {
    pub fn c_hat(&self) -> f64 {
        self.log_c_hat.exp()
    }

    /// Fitted CCDF level at `size`.
    pub fn ccdf_at(&self, size: f64) -> f64 {
        (self.log_c_hat - self.gamma_hat * size.ln()).exp()
    }
}

/// Running sums for simple linear regression.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
}

impl Sums {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.xy += x * y;
        self.yy += y * y;
    }

    fn minus(&self, o: &Sums) -> Sums {
        Sums {
            n: self.n - o.n,
            x: self.x - o.x,
            y: self.y - o.y,
            xx: self.xx - o.xx,
            xy: self.xy - o.xy,
            yy: self.yy - o.yy,
        }
    }

    /// Residual sum of squares of the OLS line, from raw moments.
    fn rss(&self) -> Option<f64> {
        let sxx = self.xx - self.x * self.x / self.n;
        if self.n < 2.0 || sxx <= 0.0 {
            return None;
        }
        let sxy = self.xy - self.x * self.y / self.n;
        let syy = self.yy - self.y * self.y / self.n;
        Some((syy - sxy * sxy / sxx).max(0.0))
    }
}

/// Plain OLS of y on x, computed with centred sums.
struct Ols {
    slope: f64,
    intercept: f64,
    se_slope: f64,
    se_intercept: f64,
    rms: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> Option<Ols> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || !sxx.is_normal() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let s2 = rss / (n - 2.0);
    Some(Ols {
        slope,
        intercept,
        se_slope: (s2 / sxx).sqrt(),
        se_intercept: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        rms: (rss / n).sqrt(),
    })
}

pub fn fit_pareto(points: &[CcdfPoint], s_minus: f64, s_plus: f64) -> Result<ParetoFit> {
    if !(s_minus.is_finite() && s_plus.is_finite() && 0.0 < s_minus && s_minus < s_plus) {
        return Err(Error::InvalidRange { s_minus, s_plus });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| s_minus <= p.size && p.size <= s_plus)
        .map(|p| (p.size.ln(), p.ccdf.ln()))
        .unzip();
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewInRange {
            need: MIN_FIT_POINTS,
            found: xs.len(),
            s_minus,
            s_plus,
        });
    }
    let fit = ols(&xs, &ys).ok_or(Error::ZeroVariance)?;
    let gamma_hat = -fit.slope;
    if !(gamma_hat > 0.0) {
        return Err(Error::NonPositiveExponent(gamma_hat));
    }
    Ok(ParetoFit {
        gamma_hat,
        log_c_hat: fit.intercept,
        s_minus,
        s_plus,
        se_gamma: fit.se_slope,
        se_log_c: fit.se_intercept,
        n_points: xs.len(),
        m_total: points.len(),
        residual_rms: fit.rms,
    })
}

/// Picks `[s_minus, s_plus]` from endpoints on the grid `exp(0.1 * i)`.
///
/// Among pairs whose OLS residual RMS is at most `max_rms`, returns the one
/// containing the most points; ties go to the narrowest pair, which for
/// clean data is the tightest grid pair around the admissible points.
pub fn suggest_range(points: &[CcdfPoint], max_rms: f64) -> Result<(f64, f64)> {
    if points.len() < MIN_SUGGEST_POINTS {
        return Err(Error::TooFewInRange {
            need: MIN_SUGGEST_POINTS,
            found: points.len(),
            s_minus: 0.0,
            s_plus: f64::INFINITY,
        });
    }
    // ascending by size
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.size.ln(), p.ccdf.ln())).collect();
    xy.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut prefix = Vec::with_capacity(xy.len() + 1);
    let mut acc = Sums::default();
    prefix.push(acc);
    for &(x, y) in &xy {
        acc.push(x, y);
        prefix.push(acc);
    }

    let lo_i = (xy[0].0 / RANGE_GRID_STEP).floor() as i64;
    let hi_i = (xy[xy.len() - 1].0 / RANGE_GRID_STEP).ceil() as i64;
    let grid: Vec<f64> = (lo_i..=hi_i).map(|i| i as f64 * RANGE_GRID_STEP).collect();
    // first index with x >= g, and first index with x > g
    let lower = |g: f64| xy.partition_point(|p| p.0 < g - 1e-12);
    let upper = |g: f64| xy.partition_point(|p| p.0 <= g + 1e-12);

    let mut best: Option<(usize, usize, usize, usize)> = None; // (count, span, i, j)
    for (i, &gi) in grid.iter().enumerate() {
        let a = lower(gi);
        for (j, &gj) in grid.iter().enumerate().skip(i + 1) {
            let b = upper(gj);
            let count = b.saturating_sub(a);
            if count < MIN_FIT_POINTS {
                continue;
            }
            let s = prefix[b].minus(&prefix[a]);
            let Some(rss) = s.rss() else { continue };
            if (rss / s.n).sqrt() > max_rms {
                continue;
            }
            let cand = (count, j - i, i, j);
            let better = match best {
                None => true,
                Some((c, span, ..)) => count > c || (count == c && j - i < span),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    let (_, _, i, j) = best.ok_or(Error::NoAdmissibleRange { threshold: max_rms })?;
    Ok((grid[i].exp(), grid[j].exp()))
}

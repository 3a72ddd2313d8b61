//! Nadaraya-Watson regression with a Gaussian kernel.
//!
//! Used for return on assets against log assets. Pointwise bands are
//! `estimate +- 1.96 * se`, where `se^2 = sigma2(x) * sum w^2 / (sum w)^2` and
//! `sigma2(x)` is the kernel-weighted residual variance. They are asymptotic
//! and pointwise, not simultaneous.

use serde::{Deserialize, Serialize};

use crate::dataset::Snapshot;
use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 10;
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XyPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaPoints {
    /// `x = ln assets`, `y = profits / assets`.
    pub points: Vec<XyPoint>,
    /// Firms skipped for missing profits.
    pub dropped: usize,
}

pub fn returns_on_assets(s: &Snapshot) -> Result<RoaPoints> {
    let mut dropped = 0;
    let points: Vec<XyPoint> = s
        .firms()
        .iter()
        .filter_map(|f| match f.profits {
            Some(p) => Some(XyPoint {
                x: f.assets.ln(),
                y: p / f.assets,
            }),
            None => {
                dropped += 1;
                None
            }
        })
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyInput("empty result: no firm reports profits"));
    }
    Ok(RoaPoints { points, dropped })
}

/// Log assets in `prev` against log assets in `next` for firms present in
/// both under the same name.
///
/// Regressing these gives the expected next-year size given this year's
/// size. This is a fixed-bandwidth summary, not an adaptive estimate of the
/// full conditional distribution.
pub fn size_transition_points(prev: &Snapshot, next: &Snapshot) -> Vec<XyPoint> {
    use std::collections::HashMap;
    let later: HashMap<&str, f64> = next.firms().iter().map(|f| (f.name.as_str(), f.assets)).collect();
    prev.firms()
        .iter()
        .filter_map(|f| {
            later.get(f.name.as_str()).map(|&a| XyPoint {
                x: f.assets.ln(),
                y: a.ln(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Silverman's rule of thumb on x.
    Auto,
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Bandwidth::Auto);
        }
        s.parse::<f64>()
            .map(Bandwidth::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("bandwidth must be a number or `auto`, got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCurve {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    pub bandwidth: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, using `sd` alone when the IQR
/// vanishes.
pub fn silverman_bandwidth(xs: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    (h > 0.0 && h.is_finite()).then_some(h)
}

pub fn nw_regress(points: &[XyPoint], bandwidth: Bandwidth, grid_size: usize) -> Result<RegressionCurve> {
    if points.len() < MIN_POINTS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_POINTS} points, got {}",
            points.len()
        )));
    }
    if grid_size < 2 {
        return Err(Error::InvalidParameter("grid_size must be at least 2".into()));
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::InvalidParameter("non-finite regression point".into()));
    }
    // canonical order makes the result independent of input order
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();

    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::Auto => silverman_bandwidth(&xs)
            .ok_or_else(|| Error::InvalidParameter("x has no spread; cannot choose a bandwidth".into()))?,
    };

    let (x_min, x_max) = (xs[0], xs[xs.len() - 1]);
    if x_max <= x_min {
        return Err(Error::InvalidParameter("x has no spread".into()));
    }
    let y_min = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_max = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let y_ref = pts[0].y;

    let step = (x_max - x_min) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| {
            if i + 1 == grid_size {
                x_max
            } else {
                x_min + step * i as f64
            }
        })
        .collect();

    let mut estimate = Vec::with_capacity(grid_size);
    let mut band_low = Vec::with_capacity(grid_size);
    let mut band_high = Vec::with_capacity(grid_size);
    let mut w = vec![0.0; pts.len()];
    for &g in &grid {
        // weights relative to the largest one, so far-out grid points with a
        // tiny bandwidth cannot underflow to 0/0
        let u2 = |x: f64| ((g - x) / h).powi(2);
        let u2_min = xs.iter().map(|&x| u2(x)).fold(f64::INFINITY, f64::min);
        for (wi, &x) in w.iter_mut().zip(&xs) {
            *wi = (-0.5 * (u2(x) - u2_min)).exp();
        }
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|v| v * v).sum();
        // centred on y_ref so that a constant response is reproduced exactly
        let shift: f64 = w.iter().zip(&pts).map(|(wi, p)| wi * (p.y - y_ref)).sum::<f64>() / sw;
        let m = (y_ref + shift).clamp(y_min, y_max);
        let var: f64 = w
            .iter()
            .zip(&pts)
            .map(|(wi, p)| wi * (p.y - m) * (p.y - m))
            .sum::<f64>()
            / sw;
        let se = (var * sw2 / (sw * sw)).sqrt();
        estimate.push(m);
        band_low.push(m - Z_95 * se);
        band_high.push(m + Z_95 * se);
    }
    Ok(RegressionCurve {
        grid,
        estimate,
        band_low,
        band_high,
        bandwidth: h,
    })
}

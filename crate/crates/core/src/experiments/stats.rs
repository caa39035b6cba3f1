//! Aggregation helpers: quantiles, binomial intervals, log-log rate fits.

use serde::Serialize;

use crate::error::{Error, Result};

/// Linearly interpolated quantile (R type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    let h = pos - lo as f64;
    if h == 0.0 || a == b {
        a
    } else {
        a + (b - a) * h
    }
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted(values), 0.5)
}

/// Order statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q10: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = sorted(values);
        let q = |p| quantile_sorted(&s, p);
        Some(Self {
            count: s.len(),
            min: s[0],
            q10: q(0.10),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q90: q(0.90),
            max: s[s.len() - 1],
        })
    }
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lower = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if successes as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuccessRate {
    pub successes: u64,
    pub trials: u64,
    pub fraction: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Fraction of suboptimality values at or below `epsilon`, with a 95% Wilson
/// interval.
pub fn success_probability(suboptimalities: &[f64], epsilon: f64) -> Result<SuccessRate> {
    if suboptimalities.is_empty() {
        return Err(Error::InvalidParameter("success probability needs >= 1 record".into()));
    }
    let trials = suboptimalities.len() as u64;
    let successes = suboptimalities.iter().filter(|&&e| e <= epsilon).count() as u64;
    let (lower, upper) = wilson_interval(successes, trials, Z95);
    Ok(SuccessRate {
        successes,
        trials,
        fraction: successes as f64 / trials as f64,
        lower,
        upper,
    })
}

/// Least-squares fit of `ln(error) = slope · ln(T) + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    /// Indices of points dropped for a zero (or non-finite) error.
    pub excluded: Vec<usize>,
}

pub fn fit_rate(points: &[(u64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs >= 3 grid points, got {}",
            points.len()
        )));
    }
    let mut excluded = Vec::new();
    let mut xy = Vec::with_capacity(points.len());
    for (i, &(t, err)) in points.iter().enumerate() {
        if err > 0.0 && err.is_finite() && t > 0 {
            xy.push(((t as f64).ln(), err.ln()));
        } else {
            excluded.push(i);
        }
    }
    if xy.len() < 2 {
        return Err(Error::InvalidParameter(
            "fewer than two positive errors left to fit".into(),
        ));
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all grid points share one T".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xy
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual,
        excluded,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted ratio between the largest and smallest `epsilon`.
///
/// Three halvings, which is what the standard sweeps cover.
pub const MIN_EPSILON_SPAN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln epsilon, ln error)`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points, need at least 3", pairs.len())));
    }
    if pairs.iter().any(|&(e, v)| !(e > 0.0 && v > 0.0 && e.is_finite() && v.is_finite())) {
        return Err(Error::DegenerateFit("epsilons and errors must be positive".into()));
    }
    let (lo, hi) = pairs
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(e, _)| (lo.min(e), hi.max(e)));
    if hi / lo < MIN_EPSILON_SPAN * (1.0 - 1e-9) {
        return Err(Error::DegenerateFit(format!(
            "epsilon spans a factor {:.3}, need {MIN_EPSILON_SPAN}",
            hi / lo
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    Ok(ols(&xs, &ys))
}

/// Plain least-squares line `y = slope x + intercept`.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> RateFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    RateFit {
        slope,
        intercept,
        r_squared,
    }
}

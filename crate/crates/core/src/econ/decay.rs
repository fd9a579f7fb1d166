//! Exponential-decay model of forecast scores.
//!
//! The model explains a score for stock `i` by a weighted sum of its lagged
//! weekly returns,
//!
//! ```text
//! score_i = 5.5 + lambda1 * sum_{s=0}^{L-1} w_s(lambda2) * r_{i,s} + e_i
//! w_s = lambda2^s / sum_j lambda2^j
//! ```
//!
//! with `s = 0` the most recent week. `lambda1` measures overall sensitivity,
//! `lambda2` in `[0, 1]` how fast attention decays with lag age, and the
//! summary `lambda1 * (1 - lambda2)` the net tilt toward the latest week: it
//! is zero either when returns are ignored or when all lags are weighted
//! equally.
//!
//! Estimation profiles `lambda1` out in closed form (for fixed `lambda2` the
//! model is a through-origin regression of centred scores on the weighted
//! return), scans a coarse `lambda2` grid, refines the best bracket by
//! golden-section search, and reports cluster-robust Gauss-Newton standard
//! errors.

use nalgebra::{Matrix2, Vector2};

use super::ols::SmallSample;
use crate::error::{Error, Result};
use crate::panel::LagMatrix;

/// Centre of a 1..10 rank scale; scores are modelled as deviations from it.
pub const RANK_MIDPOINT: f64 = 5.5;

const LAMBDA2_MIN: f64 = 0.0;
const LAMBDA2_MAX: f64 = 1.0;
const GRID_STEP: f64 = 0.05;
const REFINE_TOL: f64 = 1e-10;
const MAX_REFINE_ITERS: usize = 200;

/// Result of fitting the decay model.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `lambda1 * (1 - lambda2)`.
    pub degree: f64,
    pub se_lambda1: f64,
    pub se_lambda2: f64,
    /// Delta-method standard error of `degree`.
    pub se_degree: f64,
    /// Fitted lag weights `w_0..w_{L-1}`, most recent first; they sum to one.
    pub weights: Vec<f64>,
    pub n_lags: usize,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Sum of squared residuals at the optimum.
    pub objective: f64,
    pub converged: bool,
    /// True when `lambda2` lands on the edge of `[0, 1]`, where the decay
    /// shape is no longer interior-identified.
    pub lambda2_at_boundary: bool,
}

/// Normalized geometric lag weights, most recent first. `lambda2 = 0` puts
/// all weight on the latest lag (`0^0 = 1`); `lambda2 = 1` weights all lags
/// equally.
pub fn decay_weights(lambda2: f64, lags: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..lags).map(|s| lambda2.powi(s as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Net tilt toward the most recent lag.
pub fn degree_of_extrapolation(lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * (1.0 - lambda2)
}

/// Derivatives `dw_s/dlambda2`, most recent first. The `s = 0` term has no
/// `lambda2^{s-1}` factor (its numerator weight is constant), leaving
/// `-S'/S^2`.
fn weight_derivatives(lambda2: f64, lags: usize) -> Vec<f64> {
    let s_sum: f64 = (0..lags).map(|j| lambda2.powi(j as i32)).sum();
    let s_prime: f64 = (1..lags)
        .map(|j| j as f64 * lambda2.powi(j as i32 - 1))
        .sum();
    (0..lags)
        .map(|s| {
            let numerator = if s == 0 {
                -s_prime
            } else {
                s as f64 * lambda2.powi(s as i32 - 1) * s_sum - lambda2.powi(s as i32) * s_prime
            };
            numerator / (s_sum * s_sum)
        })
        .collect()
}

struct Profile {
    lambda1: f64,
    ssr: f64,
    z: Vec<f64>,
}

/// For fixed `lambda2`, the optimal `lambda1` is the through-origin slope of
/// centred scores on the weighted return `z`.
fn profile(y_centred: &[f64], lag_rows: &[Vec<f64>], lambda2: f64, lags: usize) -> Profile {
    let w = decay_weights(lambda2, lags);
    let z: Vec<f64> = lag_rows
        .iter()
        .map(|row| row.iter().zip(&w).map(|(r, wi)| r * wi).sum())
        .collect();
    let num: f64 = z.iter().zip(y_centred).map(|(zi, yi)| zi * yi).sum();
    let den: f64 = z.iter().map(|zi| zi * zi).sum();
    let lambda1 = if den > 0.0 { num / den } else { 0.0 };
    let ssr: f64 = z
        .iter()
        .zip(y_centred)
        .map(|(zi, yi)| (yi - lambda1 * zi).powi(2))
        .sum();
    Profile { lambda1, ssr, z }
}

/// Fits the decay model to a stacked lag design whose dependent variable is a
/// forecast score and whose lag columns are raw returns, most recent first.
pub fn fit_decay(lm: &LagMatrix) -> Result<DecayFit> {
    let n = lm.n_rows();
    let lags = lm.lags;
    if n == 0 {
        return Err(Error::Estimation("no observations".into()));
    }
    if lags < 2 {
        return Err(Error::Estimation("decay fit needs at least 2 lags".into()));
    }
    let y_centred: Vec<f64> = lm.y.iter().map(|v| v - RANK_MIDPOINT).collect();
    let lag_cols = lm.lag_columns();
    if lag_cols.len() != lags {
        return Err(Error::Estimation(format!(
            "design has {} lag columns for lag depth {}",
            lag_cols.len(),
            lags
        )));
    }
    let lag_rows: Vec<Vec<f64>> =
        lm.x.iter()
            .map(|row| row[lag_cols.clone()].to_vec())
            .collect();

    let ssr_at = |l2: f64| profile(&y_centred, &lag_rows, l2, lags).ssr;

    // Coarse scan, then a golden-section refinement of the winning bracket.
    let mut best_idx = 0usize;
    let mut best_ssr = f64::INFINITY;
    let grid: Vec<f64> = (1..20).map(|i| i as f64 * GRID_STEP).collect();
    for (i, &l2) in grid.iter().enumerate() {
        let ssr = ssr_at(l2);
        if ssr < best_ssr {
            best_ssr = ssr;
            best_idx = i;
        }
    }
    let mut lo = if best_idx == 0 {
        LAMBDA2_MIN
    } else {
        grid[best_idx - 1]
    };
    let mut hi = if best_idx + 1 == grid.len() {
        LAMBDA2_MAX
    } else {
        grid[best_idx + 1]
    };

    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - invphi * (hi - lo);
    let mut b = lo + invphi * (hi - lo);
    let mut fa = ssr_at(a);
    let mut fb = ssr_at(b);
    let mut iters = 0;
    while hi - lo > REFINE_TOL && iters < MAX_REFINE_ITERS {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - invphi * (hi - lo);
            fa = ssr_at(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + invphi * (hi - lo);
            fb = ssr_at(b);
        }
        iters += 1;
    }
    let converged = hi - lo <= 1e-8;
    let lambda2 = 0.5 * (lo + hi);
    let fit = profile(&y_centred, &lag_rows, lambda2, lags);
    let lambda1 = fit.lambda1;
    let boundary = lambda2 <= LAMBDA2_MIN + 0.005 || lambda2 >= LAMBDA2_MAX - 0.005;

    // Gauss-Newton cluster sandwich on (lambda1, lambda2).
    let dw = weight_derivatives(lambda2, lags);
    let dz: Vec<f64> = lag_rows
        .iter()
        .map(|row| row.iter().zip(&dw).map(|(r, di)| r * di).sum())
        .collect();
    let residuals: Vec<f64> = y_centred
        .iter()
        .zip(&fit.z)
        .map(|(yi, zi)| yi - lambda1 * zi)
        .collect();

    let mut a_mat = Matrix2::zeros();
    for (zi, dzi) in fit.z.iter().zip(&dz) {
        let j = Vector2::new(*zi, lambda1 * dzi);
        a_mat += j * j.transpose();
    }
    let a_inv = a_mat.try_inverse().ok_or_else(|| {
        Error::Estimation(
            "decay curvature is unidentified (singular Gauss-Newton cross-product)".into(),
        )
    })?;

    let mut clusters: std::collections::BTreeMap<&str, Vector2<f64>> =
        std::collections::BTreeMap::new();
    for i in 0..n {
        let j = Vector2::new(fit.z[i], lambda1 * dz[i]);
        *clusters
            .entry(lm.cluster[i].as_str())
            .or_insert_with(Vector2::zeros) += j * residuals[i];
    }
    let g = clusters.len();
    let factor = match SmallSample::Cr1 {
        _ if g < 2 => {
            return Err(Error::Estimation(
                "clustered small-sample correction needs at least 2 clusters".into(),
            ))
        }
        _ if n <= 2 => {
            return Err(Error::Estimation(
                "decay fit needs more than 2 observations".into(),
            ))
        }
        _ => (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - 2.0)),
    };
    let mut meat = Matrix2::zeros();
    for u in clusters.values() {
        meat += u * u.transpose();
    }
    let vcov = a_inv * meat * a_inv * factor;
    let se_lambda1 = vcov[(0, 0)].max(0.0).sqrt();
    let se_lambda2 = vcov[(1, 1)].max(0.0).sqrt();
    let gradient = Vector2::new(1.0 - lambda2, -lambda1);
    let se_degree = (gradient.transpose() * vcov * gradient)[(0, 0)]
        .max(0.0)
        .sqrt();

    Ok(DecayFit {
        lambda1,
        lambda2,
        degree: degree_of_extrapolation(lambda1, lambda2),
        se_lambda1,
        se_lambda2,
        se_degree,
        weights: decay_weights(lambda2, lags),
        n_lags: lags,
        n_obs: n,
        n_clusters: g,
        objective: fit.ssr,
        converged,
        lambda2_at_boundary: boundary,
    })
}

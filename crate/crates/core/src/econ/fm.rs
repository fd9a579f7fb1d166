//! Period-by-period cross-sectional regressions, the forecast decomposition
//! they consume, and the percentile-loading regression for distribution
//! forecasts.

use nalgebra::DMatrix;

use super::ols::{ols_cluster, stars, CoefTable, OlsSpec, SmallSample};
use crate::calib::HistoricalDistribution;
use crate::error::{Error, Result};
use crate::panel::{ContestPanel, LagMatrix, ScoreMap};
use crate::prompt::DistributionForecast;

/// One period's cross-section for a period-by-period regression.
#[derive(Debug, Clone, PartialEq)]
pub struct FmPeriodInput {
    pub period: String,
    pub y: Vec<f64>,
    /// Row-major design, including any intercept column.
    pub x: Vec<Vec<f64>>,
}

/// One period's estimated cross-sectional coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FmPeriod {
    pub period: String,
    pub coefs: Vec<f64>,
    pub n_obs: usize,
}

/// Period-by-period estimates: coefficients are averaged over periods and
/// their standard errors come from the time-series dispersion of the
/// per-period estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FmResult {
    pub y_name: String,
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// `sd(per-period coefficients) / sqrt(T)`.
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub n_periods: usize,
    pub periods: Vec<FmPeriod>,
    /// Periods skipped for rank deficiency or too few observations.
    pub dropped_periods: Vec<String>,
}

impl FmResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64, f64)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.mean[i], self.se[i], self.t[i]))
    }

    /// Deterministic fixed-width rendering, t statistics in parentheses.
    pub fn to_text(&self, title: &str) -> String {
        use std::fmt::Write as _;
        let name_w = self.names.iter().map(|n| n.len()).max().unwrap_or(4).max(9);
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "Dependent variable: {}", self.y_name);
        let _ = writeln!(s, "{}", "-".repeat(name_w + 26));
        for i in 0..self.names.len() {
            let _ = writeln!(
                s,
                "{:<name_w$}  {:>10.4}  ({:.4}){}",
                self.names[i],
                self.mean[i],
                self.t[i],
                stars(self.t[i])
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(name_w + 26));
        if !self.dropped_periods.is_empty() {
            let _ = writeln!(s, "Dropped periods: {}", self.dropped_periods.join(", "));
        }
        let _ = writeln!(s, "Periods: {}", self.n_periods);
        s
    }
}

/// Solves one period's cross-section; `None` marks a period that cannot be
/// estimated (rank deficient or fewer observations than regressors).
fn cross_section(y: &[f64], x: &[Vec<f64>], k: usize) -> Option<Vec<f64>> {
    let n = y.len();
    if n < k {
        return None;
    }
    let xm = DMatrix::from_fn(n, k, |i, j| x[i][j]);
    let svd = xm.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-10 * max_sv.max(f64::MIN_POSITIVE);
    if svd.rank(tol) < k {
        return None;
    }
    let yv = nalgebra::DVector::from_column_slice(y);
    let beta = svd.solve(&yv, tol).ok()?;
    Some(beta.iter().copied().collect())
}

/// Runs the period-by-period regression over `inputs`.
///
/// Inestimable periods are dropped and recorded, not fatal; at least two
/// estimable periods are required for a time-series standard error.
pub fn fama_macbeth(y_name: &str, names: &[String], inputs: &[FmPeriodInput]) -> Result<FmResult> {
    let k = names.len();
    if k == 0 {
        return Err(Error::Estimation("no regressors".into()));
    }
    let mut periods = Vec::new();
    let mut dropped = Vec::new();
    for input in inputs {
        if input.y.len() != input.x.len() || input.x.iter().any(|r| r.len() != k) {
            return Err(Error::Estimation(format!(
                "period {} has inconsistent dimensions",
                input.period
            )));
        }
        match cross_section(&input.y, &input.x, k) {
            Some(coefs) => periods.push(FmPeriod {
                period: input.period.clone(),
                coefs,
                n_obs: input.y.len(),
            }),
            None => dropped.push(input.period.clone()),
        }
    }
    let t_periods = periods.len();
    if t_periods < 2 {
        return Err(Error::Estimation(format!(
            "period-by-period estimation needs at least 2 estimable periods; got {t_periods}"
        )));
    }
    let tf = t_periods as f64;
    let mut mean = vec![0.0; k];
    for p in &periods {
        for (m, c) in mean.iter_mut().zip(&p.coefs) {
            *m += c / tf;
        }
    }
    let mut se = vec![0.0; k];
    for j in 0..k {
        let var: f64 = periods
            .iter()
            .map(|p| (p.coefs[j] - mean[j]).powi(2))
            .sum::<f64>()
            / (tf - 1.0);
        se[j] = (var / tf).sqrt();
    }
    let t: Vec<f64> = mean.iter().zip(&se).map(|(m, s)| m / s).collect();
    Ok(FmResult {
        y_name: y_name.to_string(),
        names: names.to_vec(),
        mean,
        se,
        t,
        n_periods: t_periods,
        periods,
        dropped_periods: dropped,
    })
}

/// A forecast score split into the part explained by lagged returns and the
/// leftover.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDecomposition {
    /// The first-stage regression of scores on lagged returns.
    pub table: CoefTable,
    /// Fitted score per `(contest, stock)`.
    pub predicted: ScoreMap,
    /// Score minus fitted, per `(contest, stock)`.
    pub residual: ScoreMap,
}

/// Splits forecast scores into their return-predicted part and residual via
/// the pooled first-stage regression on the stacked lag design.
pub fn decompose_forecast(lm: &LagMatrix) -> Result<ForecastDecomposition> {
    let table = ols_cluster(&OlsSpec::from_lag_matrix(lm))?;
    let mut predicted = ScoreMap::new();
    let mut residual = ScoreMap::new();
    for (i, key) in lm.row_keys.iter().enumerate() {
        predicted.insert(key.clone(), table.fitted[i]);
        residual.insert(key.clone(), table.residuals[i]);
    }
    Ok(ForecastDecomposition {
        table,
        predicted,
        residual,
    })
}

/// Number of trading days a weekly return is spread over.
pub const TRADING_DAYS_PER_WEEK: usize = 5;

/// Converts a weekly return to its constant daily equivalent.
pub fn weekly_to_daily_return(weekly: f64) -> f64 {
    (1.0 + weekly).powf(1.0 / TRADING_DAYS_PER_WEEK as f64) - 1.0
}

/// Regressor names for the daily-return cross-sections.
pub fn fm_design_names() -> Vec<String> {
    vec![
        "Intercept".into(),
        "Predicted score".into(),
        "Residual score".into(),
    ]
}

/// Builds one period per contest: each stock contributes one row per trading
/// day of the forecast week, the day's return on the left and the stock's
/// decomposed score on the right.
pub fn fm_daily_design(
    panels: &[ContestPanel],
    decomposition: &ForecastDecomposition,
) -> Result<Vec<FmPeriodInput>> {
    let mut inputs = Vec::new();
    for p in panels {
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (i, sid) in p.stock_ids.iter().enumerate() {
            let key = (p.contest_id.clone(), sid.clone());
            let pred = *decomposition.predicted.get(&key).ok_or_else(|| {
                Error::InvalidData(format!(
                    "no decomposed score for contest {} stock {sid}",
                    p.contest_id
                ))
            })?;
            let resid = *decomposition.residual.get(&key).ok_or_else(|| {
                Error::InvalidData(format!(
                    "no decomposed score for contest {} stock {sid}",
                    p.contest_id
                ))
            })?;
            let daily = weekly_to_daily_return(p.realized_next[i]);
            for _ in 0..TRADING_DAYS_PER_WEEK {
                y.push(daily);
                x.push(vec![1.0, pred, resid]);
            }
        }
        inputs.push(FmPeriodInput {
            period: p.contest_id.clone(),
            y,
            x,
        });
    }
    Ok(inputs)
}

/// Column names for the historical-statistic design, ordered as
/// [`hist_stat_vector`] emits them.
pub const HIST_STAT_NAMES: [&str; 11] = [
    "Minimum return",
    "10th percentile",
    "20th percentile",
    "30th percentile",
    "40th percentile",
    "50th percentile",
    "60th percentile",
    "70th percentile",
    "80th percentile",
    "90th percentile",
    "Maximum return",
];

/// Flattens a historical distribution into the regression design order:
/// minimum, the nine deciles, maximum. Percent units.
pub fn hist_stat_vector(h: &HistoricalDistribution) -> Vec<f64> {
    let mut v = Vec::with_capacity(11);
    v.push(h.min);
    v.extend_from_slice(&h.deciles);
    v.push(h.max);
    v
}

/// One distribution forecast paired with the historical statistics of the
/// window it was prompted from. `year_month` groups observations for fixed
/// effects and clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileObs {
    pub series_id: String,
    pub year_month: String,
    pub forecast: DistributionForecast,
    pub hist: HistoricalDistribution,
}

/// Regresses each forecast percentile (low, expected, high) on the eleven
/// historical statistics with absorbed year-month fixed effects, clustering
/// by year-month. Returns the three tables in that order.
pub fn percentile_regression(obs: &[PercentileObs]) -> Result<[CoefTable; 3]> {
    if obs.is_empty() {
        return Err(Error::Estimation("no distribution forecasts".into()));
    }
    let names: Vec<String> = HIST_STAT_NAMES.iter().map(|s| s.to_string()).collect();
    let x: Vec<Vec<f64>> = obs.iter().map(|o| hist_stat_vector(&o.hist)).collect();
    let groups: Vec<String> = obs.iter().map(|o| o.year_month.clone()).collect();
    let run = |y_name: &str, y: Vec<f64>| -> Result<CoefTable> {
        ols_cluster(&OlsSpec {
            y_name,
            x_names: &names,
            y: &y,
            x: &x,
            cluster: &groups,
            fixed_effects: Some(&groups),
            small_sample: SmallSample::Cr1,
            drop_zero_columns: false,
        })
    };
    Ok([
        run("Low forecast", obs.iter().map(|o| o.forecast.low).collect())?,
        run(
            "Expected forecast",
            obs.iter().map(|o| o.forecast.expected).collect(),
        )?,
        run(
            "High forecast",
            obs.iter().map(|o| o.forecast.high).collect(),
        )?,
    ])
}

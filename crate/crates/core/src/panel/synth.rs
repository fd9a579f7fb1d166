//! Seeded synthetic data generators.
//!
//! Weekly returns follow a stationary Gaussian AR(1),
//! `r_w = rho * r_{w-1} + sigma * eps_w`, drawn independently per stock with
//! the initial value taken from the stationary distribution. A negative
//! `rho` reproduces the short-horizon reversal patterns the estimators are
//! designed to detect; `sigma = 0` degenerates to an all-zero panel, which is
//! allowed and useful in tests.
//!
//! When requested, a daily OHLC path is synthesised alongside each weekly
//! series: five trading days per week whose compounded close-to-close (and,
//! because each day opens at the previous close, open-to-close) returns equal
//! the weekly return exactly up to floating-point rounding.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{ContestPanel, DailyBar, Month, MonthlySeries, STOCKS_PER_CONTEST, VALID_LAGS};

/// Parameters for contest synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_contests: usize,
    /// Weekly lag columns per contest; 12 or 24.
    pub lags: usize,
    /// AR(1) coefficient `rho`; strictly inside (-1, 1). Reversal designs use
    /// `rho <= 0`.
    pub reversal_coeff: f64,
    /// Innovation standard deviation of the weekly AR(1), decimal units.
    /// Zero is allowed and produces an all-zero panel.
    pub noise_sd: f64,
    pub seed: u64,
    /// Also synthesise the per-stock daily OHLC block.
    pub with_ohlc: bool,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_contests == 0 {
            return Err(Error::InvalidConfig("n_contests must be positive".into()));
        }
        if !VALID_LAGS.contains(&self.lags) {
            return Err(Error::InvalidConfig(format!(
                "lags = {} not in {:?}",
                self.lags, VALID_LAGS
            )));
        }
        if !self.reversal_coeff.is_finite() || self.reversal_coeff.abs() >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "reversal_coeff = {} must satisfy |rho| < 1",
                self.reversal_coeff
            )));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sd = {} must be non-negative",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// Parameters for monthly-series synthesis (iid Gaussian monthly returns).
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySynthConfig {
    pub n_series: usize,
    /// Months per series.
    pub n_months: usize,
    /// Mean monthly return, decimal units.
    pub mean: f64,
    /// Monthly return standard deviation, decimal units.
    pub sd: f64,
    pub seed: u64,
    /// Series `i` starts `i % stagger_months` months after the base month, so
    /// end months spread across the calendar (needed for year-month effects).
    pub stagger_months: usize,
}

impl MonthlySynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.n_months == 0 {
            return Err(Error::InvalidConfig(
                "n_series and n_months must be positive".into(),
            ));
        }
        if !self.mean.is_finite() || !self.sd.is_finite() || self.sd < 0.0 {
            return Err(Error::InvalidConfig(
                "monthly mean must be finite and sd non-negative".into(),
            ));
        }
        if self.stagger_months == 0 {
            return Err(Error::InvalidConfig(
                "stagger_months must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First trading day used for synthetic OHLC paths (a Monday).
const OHLC_EPOCH: (i32, u32, u32) = (2020, 1, 6);

/// Intraweek daily log-return jitter used when splitting a weekly return into
/// five daily moves.
const DAILY_JITTER_SD: f64 = 0.01;

/// Relative wick extension beyond the candle body.
const WICK_SD: f64 = 0.004;

/// Draws `n` AR(1) values starting from the stationary distribution.
fn ar1_path(rng: &mut ChaCha8Rng, n: usize, rho: f64, sd: f64) -> Vec<f64> {
    let mut path = Vec::with_capacity(n);
    let stationary_sd = if sd == 0.0 {
        0.0
    } else {
        sd / (1.0 - rho * rho).sqrt()
    };
    let z: f64 = rng.sample(StandardNormal);
    let mut r = stationary_sd * z;
    path.push(r);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        r = rho * r + sd * z;
        path.push(r);
    }
    path
}

fn next_weekday(mut d: NaiveDate) -> NaiveDate {
    d = d.checked_add_days(Days::new(1)).expect("date in range");
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d = d.checked_add_days(Days::new(1)).expect("date in range");
    }
    d
}

/// Splits one weekly return into five daily bars continuing from
/// `(date, price)`; returns the bars and the updated cursor.
fn synth_week_bars(
    rng: &mut ChaCha8Rng,
    weekly_return: f64,
    start_date: NaiveDate,
    start_price: f64,
) -> Result<(Vec<DailyBar>, NaiveDate, f64)> {
    let gross = 1.0 + weekly_return;
    if gross <= 0.0 {
        return Err(Error::InvalidData(format!(
            "weekly return {weekly_return} <= -100% cannot be expressed as a price path"
        )));
    }
    // Jittered positive factors rescaled so their product is exactly the
    // gross weekly return.
    let raw: Vec<f64> = (0..5)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (DAILY_JITTER_SD * z).exp()
        })
        .collect();
    let product: f64 = raw.iter().product();
    let scale = (gross / product).powf(0.2);
    let mut bars = Vec::with_capacity(5);
    let mut date = start_date;
    let mut price = start_price;
    for factor in raw {
        let open = price;
        let close = price * factor * scale;
        let hi_z: f64 = rng.sample(StandardNormal);
        let lo_z: f64 = rng.sample(StandardNormal);
        let high = open.max(close) * (1.0 + (WICK_SD * hi_z).abs());
        let low = open.min(close) * (1.0 - (WICK_SD * lo_z).abs().min(0.5));
        bars.push(DailyBar {
            date,
            open,
            high,
            low,
            close,
        });
        price = close;
        date = next_weekday(date);
    }
    Ok((bars, date, price))
}

/// Generates `n_contests` independent contests under the configured AR(1).
///
/// Contest ids are `c0001`, `c0002`, ... and stock ids `T01`..`T10` within
/// each contest. The same seed always reproduces the same panels.
pub fn synth_contests(config: &SynthConfig) -> Result<Vec<ContestPanel>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_contests.to_string().len().max(4);
    let mut contests = Vec::with_capacity(config.n_contests);
    let epoch = NaiveDate::from_ymd_opt(OHLC_EPOCH.0, OHLC_EPOCH.1, OHLC_EPOCH.2)
        .expect("valid epoch date");
    for c in 0..config.n_contests {
        let contest_id = format!("c{:0width$}", c + 1, width = width);
        let stock_ids: Vec<String> = (1..=STOCKS_PER_CONTEST)
            .map(|i| format!("T{i:02}"))
            .collect();
        let mut returns = Vec::with_capacity(STOCKS_PER_CONTEST);
        let mut realized_next = Vec::with_capacity(STOCKS_PER_CONTEST);
        for _ in 0..STOCKS_PER_CONTEST {
            let path = ar1_path(
                &mut rng,
                config.lags + 1,
                config.reversal_coeff,
                config.noise_sd,
            );
            returns.push(path[..config.lags].to_vec());
            realized_next.push(path[config.lags]);
        }
        let daily_ohlc = if config.with_ohlc {
            let mut blocks = Vec::with_capacity(STOCKS_PER_CONTEST);
            for row in &returns {
                let mut bars = Vec::with_capacity(5 * config.lags);
                let mut date = epoch;
                let mut price = 100.0;
                for &weekly in row {
                    let (week_bars, next_date, next_price) =
                        synth_week_bars(&mut rng, weekly, date, price)?;
                    bars.extend(week_bars);
                    date = next_date;
                    price = next_price;
                }
                blocks.push(bars);
            }
            Some(blocks)
        } else {
            None
        };
        let panel = ContestPanel {
            contest_id,
            stock_ids,
            returns,
            realized_next,
            daily_ohlc,
        };
        panel.validate()?;
        contests.push(panel);
    }
    Ok(contests)
}

/// Generates iid-Gaussian monthly return series with staggered start months.
///
/// Series ids are `m0001`, `m0002`, ...; series `i` starts at
/// `2000-01 + (i % stagger_months)` months.
pub fn synth_monthly(config: &MonthlySynthConfig) -> Result<Vec<MonthlySeries>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = Month::new(2000, 1).expect("valid base month");
    let width = config.n_series.to_string().len().max(4);
    let mut out = Vec::with_capacity(config.n_series);
    for i in 0..config.n_series {
        let start = base.plus(i % config.stagger_months);
        let months: Vec<Month> = (0..config.n_months).map(|k| start.plus(k)).collect();
        let returns: Vec<f64> = (0..config.n_months)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                config.mean + config.sd * z
            })
            .collect();
        let series = MonthlySeries {
            series_id: format!("m{:0width$}", i + 1, width = width),
            months,
            returns,
        };
        series.validate()?;
        out.push(series);
    }
    Ok(out)
}

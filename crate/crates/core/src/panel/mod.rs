//! Panel data structures: ranking contests over weekly returns, monthly
//! return series, and the long-format lag matrices fed to the estimators.
//!
//! All returns held here are decimal fractions (`0.02` = +2%). A contest is a
//! cross-section of exactly ten stocks observed over `L` consecutive weekly
//! returns (`L` of 12 or 24, oldest first) plus the realized return of the
//! following week. Contests may optionally carry a daily OHLC price series per
//! stock (five trading days per week) for chart-based prompts.

mod csv_io;
mod lag;
mod ranks;
mod synth;

pub use csv_io::{
    load_contest_panel, load_monthly_series, load_ohlc, write_contest_panel, write_monthly_series,
    write_ohlc,
};
pub use lag::{build_lag_matrix, Dependent, LagMatrix, Regressors, ScoreMap};
pub use ranks::{rank_positions, return_ranks};
pub use synth::{synth_contests, synth_monthly, MonthlySynthConfig, SynthConfig};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of stocks in every ranking contest.
pub const STOCKS_PER_CONTEST: usize = 10;

/// Admissible lag-window lengths, in weeks.
pub const VALID_LAGS: [usize; 2] = [12, 24];

/// One trading day of open/high/low/close prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl DailyBar {
    /// Checks positivity and high/low consistency.
    pub fn validate(&self) -> Result<()> {
        if !(self.open.is_finite()
            && self.high.is_finite()
            && self.low.is_finite()
            && self.close.is_finite())
        {
            return Err(Error::InvalidData(format!(
                "non-finite OHLC price on {}",
                self.date
            )));
        }
        if self.open <= 0.0 || self.high <= 0.0 || self.low <= 0.0 || self.close <= 0.0 {
            return Err(Error::InvalidData(format!(
                "non-positive OHLC price on {}",
                self.date
            )));
        }
        if self.high < self.open.max(self.close) || self.low > self.open.min(self.close) {
            return Err(Error::InvalidData(format!(
                "inconsistent OHLC bar on {}: high must bound max(open, close) and low bound min(open, close)",
                self.date
            )));
        }
        Ok(())
    }
}

/// A single ranking contest: ten stocks, `L` weekly returns each (oldest
/// first, the last column is the most recent completed week), and the
/// realized return of the week being forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ContestPanel {
    pub contest_id: String,
    /// Stock identifiers, unique within the contest.
    pub stock_ids: Vec<String>,
    /// `10 x L` weekly returns, decimal fractions, row order matches
    /// `stock_ids`, columns oldest to newest.
    pub returns: Vec<Vec<f64>>,
    /// Realized return of the next week, one per stock.
    pub realized_next: Vec<f64>,
    /// Optional daily OHLC series per stock covering the `L` weeks
    /// (five trading days per week).
    pub daily_ohlc: Option<Vec<Vec<DailyBar>>>,
}

impl ContestPanel {
    /// Number of weekly lag columns.
    pub fn n_lags(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    /// Most recent completed week's return per stock.
    pub fn last_week_returns(&self) -> Vec<f64> {
        self.returns
            .iter()
            .map(|row| *row.last().expect("non-empty row"))
            .collect()
    }

    /// Full structural validation: exactly ten stocks with unique ids,
    /// rectangular return matrix with 12 or 24 columns, finite values, and a
    /// consistent OHLC block when present.
    pub fn validate(&self) -> Result<()> {
        if self.stock_ids.len() != STOCKS_PER_CONTEST {
            return Err(Error::InvalidData(format!(
                "contest {} has {} stocks; every contest requires exactly {}",
                self.contest_id,
                self.stock_ids.len(),
                STOCKS_PER_CONTEST
            )));
        }
        let unique: BTreeSet<&String> = self.stock_ids.iter().collect();
        if unique.len() != self.stock_ids.len() {
            return Err(Error::InvalidData(format!(
                "contest {} repeats a stock id",
                self.contest_id
            )));
        }
        let lags = self.n_lags();
        if !VALID_LAGS.contains(&lags) {
            return Err(Error::InvalidData(format!(
                "contest {} has {} lag weeks; expected one of {:?}",
                self.contest_id, lags, VALID_LAGS
            )));
        }
        if self.returns.len() != STOCKS_PER_CONTEST
            || self.realized_next.len() != STOCKS_PER_CONTEST
        {
            return Err(Error::InvalidData(format!(
                "contest {} has mismatched row counts",
                self.contest_id
            )));
        }
        for (sid, row) in self.stock_ids.iter().zip(&self.returns) {
            if row.len() != lags {
                return Err(Error::InvalidData(format!(
                    "contest {} stock {} has {} weekly returns; expected {}",
                    self.contest_id,
                    sid,
                    row.len(),
                    lags
                )));
            }
            if row.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "contest {} stock {} has a non-finite weekly return",
                    self.contest_id, sid
                )));
            }
        }
        if self.realized_next.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidData(format!(
                "contest {} has a non-finite realized return",
                self.contest_id
            )));
        }
        if let Some(ohlc) = &self.daily_ohlc {
            if ohlc.len() != STOCKS_PER_CONTEST {
                return Err(Error::InvalidData(format!(
                    "contest {} OHLC block covers {} stocks; expected {}",
                    self.contest_id,
                    ohlc.len(),
                    STOCKS_PER_CONTEST
                )));
            }
            for (sid, bars) in self.stock_ids.iter().zip(ohlc) {
                if bars.len() != 5 * lags {
                    return Err(Error::InvalidData(format!(
                        "contest {} stock {} has {} daily bars; expected {} (5 per week)",
                        self.contest_id,
                        sid,
                        bars.len(),
                        5 * lags
                    )));
                }
                for bar in bars {
                    bar.validate()?;
                }
            }
        }
        Ok(())
    }
}

/// A calendar month, formatted ISO style as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidData(format!("month {month} outside 1..=12")));
        }
        Ok(Month { year, month })
    }

    /// The following calendar month.
    pub fn next(self) -> Month {
        if self.month == 12 {
            Month {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Month {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// The month `n` steps later.
    pub fn plus(self, n: usize) -> Month {
        let mut m = self;
        for _ in 0..n {
            m = m.next();
        }
        m
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidData(format!("month `{s}` is not YYYY-MM")))?;
        let year: i32 = y
            .parse()
            .map_err(|_| Error::InvalidData(format!("month `{s}` has a non-numeric year")))?;
        let month: u32 = m
            .parse()
            .map_err(|_| Error::InvalidData(format!("month `{s}` has a non-numeric month")))?;
        Month::new(year, month)
    }
}

/// A monthly return series for one asset, months strictly increasing and
/// consecutive.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySeries {
    pub series_id: String,
    pub months: Vec<Month>,
    /// Decimal-fraction monthly returns aligned with `months`.
    pub returns: Vec<f64>,
}

impl MonthlySeries {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Validates alignment, finiteness, and that months advance one at a time.
    pub fn validate(&self) -> Result<()> {
        if self.months.len() != self.returns.len() {
            return Err(Error::InvalidData(format!(
                "series {} has {} months but {} returns",
                self.series_id,
                self.months.len(),
                self.returns.len()
            )));
        }
        if self.returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidData(format!(
                "series {} has a non-finite return",
                self.series_id
            )));
        }
        for pair in self.months.windows(2) {
            if pair[0].next() != pair[1] {
                return Err(Error::InvalidData(format!(
                    "series {} months not consecutive: {} then {}",
                    self.series_id, pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    /// The trailing window of `len` months ending at index `end` (inclusive),
    /// as a new series.
    pub fn window(&self, end: usize, len: usize) -> Result<MonthlySeries> {
        if len == 0 || end >= self.months.len() || end + 1 < len {
            return Err(Error::InvalidData(format!(
                "series {}: window of {} months ending at index {} out of range",
                self.series_id, len, end
            )));
        }
        let start = end + 1 - len;
        Ok(MonthlySeries {
            series_id: self.series_id.clone(),
            months: self.months[start..=end].to_vec(),
            returns: self.returns[start..=end].to_vec(),
        })
    }
}

/// A within-contest ranking, stock id -> rank, where `n` = best (highest
/// return) and `1` = worst. Ranks form a permutation of `1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    /// Stock ids in their contest presentation order.
    pub stock_ids: Vec<String>,
    /// Rank per stock, aligned with `stock_ids`; `len()` = best.
    pub ranks: Vec<u32>,
}

impl RankVector {
    pub fn new(stock_ids: Vec<String>, ranks: Vec<u32>) -> Result<Self> {
        let rv = RankVector { stock_ids, ranks };
        rv.validate()?;
        Ok(rv)
    }

    /// Rank of one stock, if present.
    pub fn rank_of(&self, stock_id: &str) -> Option<u32> {
        self.stock_ids
            .iter()
            .position(|s| s == stock_id)
            .map(|i| self.ranks[i])
    }

    /// Stock ids ordered best (highest rank) to worst.
    pub fn best_to_worst(&self) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.stock_ids.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.ranks[i]));
        order
            .into_iter()
            .map(|i| self.stock_ids[i].clone())
            .collect()
    }

    /// Checks that ranks are exactly a permutation of `1..=n` over unique ids.
    pub fn validate(&self) -> Result<()> {
        let n = self.stock_ids.len();
        if self.ranks.len() != n {
            return Err(Error::InvalidData(
                "rank vector length does not match stock ids".into(),
            ));
        }
        let unique: BTreeSet<&String> = self.stock_ids.iter().collect();
        if unique.len() != n {
            return Err(Error::InvalidData("rank vector repeats a stock id".into()));
        }
        let mut seen = vec![false; n];
        for &r in &self.ranks {
            if r < 1 || r as usize > n || seen[r as usize - 1] {
                return Err(Error::InvalidData(format!(
                    "ranks are not a permutation of 1..={n}"
                )));
            }
            seen[r as usize - 1] = true;
        }
        Ok(())
    }
}

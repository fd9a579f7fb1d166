//! Long-format design matrices: one row per (contest, stock), the dependent
//! variable chosen by the caller, and lagged weekly regressors ordered most
//! recent first.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::panel::{rank_positions, ContestPanel};

/// Forecast scores keyed by `(contest_id, stock_id)`.
pub type ScoreMap = BTreeMap<(String, String), f64>;

/// Choice of dependent variable.
#[derive(Debug, Clone)]
pub enum Dependent<'a> {
    /// Caller-supplied scores (a consensus score or a parsed forecast rank),
    /// labelled for table output. Every (contest, stock) must be present.
    Score {
        label: &'a str,
        values: &'a ScoreMap,
    },
    /// Realized return of the forecast week.
    RealizedReturn,
    /// Within-contest rank (10 = best) of the realized return.
    RealizedRank,
    /// Realized return minus the contest cross-sectional mean.
    AdjustedReturn,
}

/// Choice of regressor block built from the `L` lagged weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressors {
    /// Raw weekly returns.
    Returns,
    /// Within-contest ranks (10 = best) of each lagged week's returns.
    Ranks,
    /// Positive and negative parts: `max(r, 0)` columns then `min(r, 0)`
    /// columns.
    SignedReturns,
    /// Returns minus the contest cross-sectional mean of the same week.
    AdjustedReturns,
}

/// A stacked regression design with cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMatrix {
    pub y_name: String,
    /// Column names aligned with `x` columns; the first column is the
    /// intercept.
    pub x_names: Vec<String>,
    pub y: Vec<f64>,
    /// Row-major design, `x[i].len() == x_names.len()`.
    pub x: Vec<Vec<f64>>,
    /// Cluster label per row (the contest id).
    pub cluster: Vec<String>,
    /// `(contest_id, stock_id)` per row, for joins back to the panel.
    pub row_keys: Vec<(String, String)>,
    /// Lag depth of the regressor block.
    pub lags: usize,
}

impl LagMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Positions of the lagged regressor columns (everything after the
    /// intercept), most recent week first.
    pub fn lag_columns(&self) -> std::ops::Range<usize> {
        1..self.x_names.len()
    }
}

fn lag_name(prefix: &str, s: usize) -> String {
    if s == 0 {
        format!("{prefix} t")
    } else {
        format!("{prefix} t-{s}")
    }
}

/// Builds the stacked design over `panels`.
///
/// `lags` must not exceed any panel's lag depth; when a panel carries more
/// weeks than requested the most recent `lags` weeks are used. Lag `s` counts
/// weeks before the last observed week, so column `t` is the most recent.
pub fn build_lag_matrix(
    panels: &[ContestPanel],
    dependent: Dependent<'_>,
    regressors: Regressors,
    lags: usize,
) -> Result<LagMatrix> {
    if panels.is_empty() {
        return Err(Error::InvalidData("no panels supplied".into()));
    }
    if lags == 0 {
        return Err(Error::InvalidData("lag depth must be positive".into()));
    }
    for p in panels {
        p.validate()?;
        if p.n_lags() < lags {
            return Err(Error::InvalidData(format!(
                "contest {} has only {} lag weeks; {} requested",
                p.contest_id,
                p.n_lags(),
                lags
            )));
        }
    }

    let y_name = match &dependent {
        Dependent::Score { label, .. } => (*label).to_string(),
        Dependent::RealizedReturn => "Realized return".into(),
        Dependent::RealizedRank => "Realized rank".into(),
        Dependent::AdjustedReturn => "Adjusted realized return".into(),
    };
    let (prefix, doubled) = match regressors {
        Regressors::Returns => ("Return", false),
        Regressors::Ranks => ("Rank", false),
        Regressors::SignedReturns => ("Return", true),
        Regressors::AdjustedReturns => ("Adjusted return", false),
    };
    let mut x_names = vec!["Intercept".to_string()];
    if doubled {
        for s in 0..lags {
            x_names.push(lag_name("Return+", s));
        }
        for s in 0..lags {
            x_names.push(lag_name("Return-", s));
        }
    } else {
        for s in 0..lags {
            x_names.push(lag_name(prefix, s));
        }
    }

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut cluster = Vec::new();
    let mut row_keys = Vec::new();
    for p in panels {
        let depth = p.n_lags();
        // recent[s][i] = return of stock i, s weeks before the last week.
        let recent: Vec<Vec<f64>> = (0..lags)
            .map(|s| p.returns.iter().map(|row| row[depth - 1 - s]).collect())
            .collect();
        let week_ranks: Option<Vec<Vec<u32>>> = if regressors == Regressors::Ranks {
            Some(
                recent
                    .iter()
                    .map(|week| rank_positions(week))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let week_means: Vec<f64> = recent
            .iter()
            .map(|week| week.iter().sum::<f64>() / week.len() as f64)
            .collect();
        let realized_mean = p.realized_next.iter().sum::<f64>() / p.realized_next.len() as f64;
        let realized_ranks = rank_positions(&p.realized_next)?;

        for (i, sid) in p.stock_ids.iter().enumerate() {
            let yi = match &dependent {
                Dependent::Score { values, .. } => *values
                    .get(&(p.contest_id.clone(), sid.clone()))
                    .ok_or_else(|| {
                        Error::InvalidData(format!(
                            "missing dependent value for contest {} stock {}",
                            p.contest_id, sid
                        ))
                    })?,
                Dependent::RealizedReturn => p.realized_next[i],
                Dependent::RealizedRank => realized_ranks[i] as f64,
                Dependent::AdjustedReturn => p.realized_next[i] - realized_mean,
            };
            let mut row = Vec::with_capacity(x_names.len());
            row.push(1.0);
            match regressors {
                Regressors::Returns => {
                    row.extend(recent.iter().map(|week| week[i]));
                }
                Regressors::Ranks => {
                    let ranks = week_ranks.as_ref().expect("ranks precomputed");
                    row.extend(ranks.iter().map(|week| week[i] as f64));
                }
                Regressors::SignedReturns => {
                    row.extend(recent.iter().map(|week| week[i].max(0.0)));
                    row.extend(recent.iter().map(|week| week[i].min(0.0)));
                }
                Regressors::AdjustedReturns => {
                    row.extend(recent.iter().zip(&week_means).map(|(week, m)| week[i] - m));
                }
            }
            y.push(yi);
            x.push(row);
            cluster.push(p.contest_id.clone());
            row_keys.push((p.contest_id.clone(), sid.clone()));
        }
    }
    Ok(LagMatrix {
        y_name,
        x_names,
        y,
        x,
        cluster,
        row_keys,
        lags,
    })
}

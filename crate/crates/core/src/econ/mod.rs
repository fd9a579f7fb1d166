//! Estimation battery: pooled cluster-robust OLS, the exponential-decay score
//! model, period-by-period cross-sections, and the percentile-loading
//! regression.
//!
//! Everything consumes the stacked designs from [`crate::panel`] and returns
//! plain coefficient tables, so the pipeline layers (and its tests) can treat
//! each estimator as a pure function of data.

mod decay;
mod fm;
mod ols;

pub use decay::{decay_weights, degree_of_extrapolation, fit_decay, DecayFit, RANK_MIDPOINT};
pub use fm::{
    decompose_forecast, fama_macbeth, fm_daily_design, fm_design_names, hist_stat_vector,
    percentile_regression, weekly_to_daily_return, FmPeriod, FmPeriodInput, FmResult,
    ForecastDecomposition, PercentileObs, HIST_STAT_NAMES, TRADING_DAYS_PER_WEEK,
};
pub use ols::{ols_cluster, sign_split_regress, stars, CoefTable, OlsSpec, ParenStat, SmallSample};

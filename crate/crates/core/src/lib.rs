//! Audit pipeline for studying how return forecasters extrapolate from past
//! returns and how well their stated uncertainty is calibrated.
//!
//! The crate is organised around the flow of an audit run:
//!
//! 1. [`panel`] — contest panels of weekly returns and monthly return series,
//!    either loaded from CSV or synthesised from a seeded AR(1) process.
//! 2. [`prompt`] — byte-stable prompt construction (text + CSV/chart
//!    attachments) and strict parsing of forecaster responses.
//! 3. [`chart`] — deterministic candlestick renderings of daily prices for
//!    chart-based ranking prompts.
//! 4. [`forecaster`] — query execution against a live HTTP backend or one of
//!    the synthetic backends (extrapolator, reversal, percentile oracle,
//!    noise), with a content-addressed response cache.
//! 5. [`econ`] — the estimation battery: cluster-robust OLS, sign-split
//!    regressions, the nonlinear decay fit, forecast decomposition,
//!    Fama-MacBeth, and percentile-loading regressions.
//! 6. [`calib`] — historical return distributions, bias t-tests, interval
//!    coverage, and forecast histograms.
//!
//! Unit conventions, used consistently across modules: returns inside panels
//! and series are decimal fractions (`0.02` = +2%); distribution forecasts and
//! everything in [`calib`] are in percent units, matching how forecasts are
//! elicited. Rankings are stored with 10 = best (highest predicted return);
//! the wire format's key `"1"` (highest return) maps to internal rank 10.

pub mod calib;
pub mod chart;
pub mod econ;
pub mod error;
pub mod forecaster;
pub mod panel;
pub mod prompt;

pub use error::{Error, ResponseError, Result};

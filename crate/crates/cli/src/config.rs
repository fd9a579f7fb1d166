//! Run configuration: a single TOML file describing the data source, the
//! forecaster, the experiment, and which analyses to run.
//!
//! The resolved configuration (file values plus command-line overrides) is
//! snapshotted into the output directory so every run is self-describing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use forecast_audit::forecaster::{Backend, ForecasterConfig, HttpConfig, RetryPolicy};
use forecast_audit::panel::VALID_LAGS;
use forecast_audit::{Error, Result};

/// Which prompt protocol the run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// CSV-grid ranking contests.
    RankContest,
    /// Candlestick-chart ranking contests.
    ChartRank,
    /// Market-direction calls over monthly index windows.
    Sentiment,
    /// Next-month return distributions over monthly histories.
    Distribution,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::RankContest => "rank_contest",
            Experiment::ChartRank => "chart_rank",
            Experiment::Sentiment => "sentiment",
            Experiment::Distribution => "distribution",
        }
    }

    /// Rank experiments consume contest panels; the other two consume
    /// monthly series.
    pub fn uses_contests(self) -> bool {
        matches!(self, Experiment::RankContest | Experiment::ChartRank)
    }
}

/// Where the input panels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate with the built-in synthetic generator.
    Synth,
    /// Load user-supplied CSV files.
    Files,
}

fn default_n_contests() -> usize {
    40
}

fn default_reversal() -> f64 {
    -0.3
}

fn default_noise_sd() -> f64 {
    0.03
}

fn default_n_series() -> usize {
    20
}

fn default_n_months() -> usize {
    132
}

fn default_monthly_mean() -> f64 {
    0.01
}

fn default_monthly_sd() -> f64 {
    0.04
}

fn default_stagger() -> usize {
    7
}

fn default_stride() -> usize {
    1
}

/// Data-source block of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic contest count (rank experiments).
    #[serde(default = "default_n_contests")]
    pub n_contests: usize,
    /// AR(1) coefficient of the weekly return process.
    #[serde(default = "default_reversal")]
    pub reversal_coeff: f64,
    /// Weekly innovation standard deviation, decimal units.
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Synthetic monthly series count (sentiment/distribution experiments).
    #[serde(default = "default_n_series")]
    pub n_series: usize,
    #[serde(default = "default_n_months")]
    pub n_months: usize,
    /// Mean monthly return, decimal units.
    #[serde(default = "default_monthly_mean")]
    pub monthly_mean: f64,
    #[serde(default = "default_monthly_sd")]
    pub monthly_sd: f64,
    /// Series start months are staggered over this many calendar months so
    /// window ends spread across year-months.
    #[serde(default = "default_stagger")]
    pub stagger_months: usize,
    /// Months between consecutive window ends when slicing monthly series
    /// into prompts.
    #[serde(default = "default_stride")]
    pub window_stride: usize,
    /// File-source paths (required when `source = "files"`).
    #[serde(default)]
    pub contest_csv: Option<PathBuf>,
    #[serde(default)]
    pub ohlc_csv: Option<PathBuf>,
    /// Directory of `month,return` CSVs, one series per file.
    #[serde(default)]
    pub monthly_dir: Option<PathBuf>,
}

fn default_lambda1() -> f64 {
    16.98
}

fn default_lambda2() -> f64 {
    0.28
}

fn default_agent_noise() -> f64 {
    0.5
}

fn default_max_parallel() -> usize {
    4
}

fn default_retry_attempts() -> u32 {
    3
}

fn default_retry_backoff() -> u64 {
    250
}

/// Forecaster block of the run configuration (the TOML-facing shape of
/// [`ForecasterConfig`]; seed and cache directory are run-level concerns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterToml {
    pub backend: Backend,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    /// Latent-score noise of the extrapolator agent (score units).
    #[serde(default = "default_agent_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retry_attempts")]
    pub retry_max_attempts: u32,
    #[serde(default = "default_retry_backoff")]
    pub retry_backoff_ms: u64,
    /// Live-backend settings; required when `backend = "http"`.
    #[serde(default)]
    pub http: Option<HttpConfig>,
}

fn default_true() -> bool {
    true
}

/// Which analysis outputs the estimate stage produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisToggles {
    /// Forecast score on lagged returns (plus realized-return and
    /// contest-adjusted variants).
    #[serde(default = "default_true")]
    pub eq1: bool,
    /// Sign-split regression.
    #[serde(default = "default_true")]
    pub eq2: bool,
    /// Exponential-decay fit.
    #[serde(default = "default_true")]
    pub eq3: bool,
    /// Sentiment on lagged monthly returns, plus next-month return on
    /// sentiment.
    #[serde(default = "default_true")]
    pub eq4: bool,
    /// Score on lagged within-contest ranks.
    #[serde(default = "default_true")]
    pub ranks: bool,
    /// Forecast decomposition and period-by-period daily-return regressions.
    #[serde(default = "default_true")]
    pub fm: bool,
    /// Percentile loadings of distribution forecasts.
    #[serde(default = "default_true")]
    pub eq5: bool,
    /// Bias tests, interval coverage, and histograms.
    #[serde(default = "default_true")]
    pub calibration: bool,
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        AnalysisToggles {
            eq1: true,
            eq2: true,
            eq3: true,
            eq4: true,
            ranks: true,
            fm: true,
            eq5: true,
            calibration: true,
        }
    }
}

fn default_version() -> u32 {
    1
}

fn default_lags() -> usize {
    12
}

/// The whole run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub experiment: Experiment,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Weekly lag depth for contest experiments; 12 or 24.
    #[serde(default = "default_lags")]
    pub lags: usize,
    pub data: DataConfig,
    pub forecaster: ForecasterToml,
    #[serde(default)]
    pub analysis: AnalysisToggles,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lags: Option<usize>,
    pub backend: Option<String>,
    pub max_parallel: Option<usize>,
}

impl RunConfig {
    /// Loads a configuration file, applies overrides, and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let Some(out) = &overrides.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(lags) = overrides.lags {
            config.lags = lags;
        }
        if let Some(backend) = &overrides.backend {
            config.forecaster.backend = backend
                .parse()
                .map_err(|e: Error| Error::InvalidConfig(format!("--backend: {e}")))?;
        }
        if let Some(mp) = overrides.max_parallel {
            config.forecaster.max_parallel = mp;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported configuration version {}; this build reads version 1",
                self.version
            )));
        }
        if !VALID_LAGS.contains(&self.lags) {
            return Err(Error::InvalidConfig(format!(
                "lags must be one of {VALID_LAGS:?}; got {}",
                self.lags
            )));
        }
        self.validate_data()?;
        self.validate_backend()?;
        // The underlying forecaster validation (lambda ranges, parallelism,
        // http completeness) runs on the resolved config.
        self.forecaster_config(None).validate()
    }

    fn validate_data(&self) -> Result<()> {
        let d = &self.data;
        match (self.experiment.uses_contests(), d.source) {
            (true, DataSource::Synth) => {
                if d.n_contests == 0 {
                    return Err(Error::InvalidConfig("n_contests must be positive".into()));
                }
            }
            (true, DataSource::Files) => {
                if d.contest_csv.is_none() {
                    return Err(Error::InvalidConfig(
                        "experiment needs contest data: set data.contest_csv".into(),
                    ));
                }
                if self.experiment == Experiment::ChartRank && d.ohlc_csv.is_none() {
                    return Err(Error::InvalidConfig(
                        "chart_rank needs daily prices: set data.ohlc_csv".into(),
                    ));
                }
            }
            (false, DataSource::Synth) => {
                if d.n_series == 0 {
                    return Err(Error::InvalidConfig("n_series must be positive".into()));
                }
                let needed = match self.experiment {
                    Experiment::Sentiment => 13,
                    _ => 61,
                };
                if d.n_months < needed {
                    return Err(Error::InvalidConfig(format!(
                        "{} needs at least {needed} months per series (window plus one \
                         realized month); got {}",
                        self.experiment.as_str(),
                        d.n_months
                    )));
                }
                if d.stagger_months == 0 {
                    return Err(Error::InvalidConfig(
                        "stagger_months must be positive".into(),
                    ));
                }
            }
            (false, DataSource::Files) => {
                if d.monthly_dir.is_none() {
                    return Err(Error::InvalidConfig(
                        "experiment needs monthly series: set data.monthly_dir".into(),
                    ));
                }
            }
        }
        if d.window_stride == 0 {
            return Err(Error::InvalidConfig(
                "window_stride must be positive".into(),
            ));
        }
        Ok(())
    }

    fn validate_backend(&self) -> Result<()> {
        let backend = self.forecaster.backend;
        let ok = match self.experiment {
            Experiment::RankContest | Experiment::ChartRank | Experiment::Sentiment => {
                backend != Backend::PercentileOracle
            }
            Experiment::Distribution => matches!(
                backend,
                Backend::Http | Backend::PercentileOracle | Backend::Noise
            ),
        };
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "backend `{}` cannot answer `{}` prompts",
                backend.id(),
                self.experiment.as_str()
            )));
        }
        Ok(())
    }

    /// The resolved forecaster configuration, optionally caching into a
    /// record store.
    pub fn forecaster_config(&self, cache_dir: Option<PathBuf>) -> ForecasterConfig {
        let f = &self.forecaster;
        ForecasterConfig {
            backend: f.backend,
            lambda1: f.lambda1,
            lambda2: f.lambda2,
            noise_sd: f.noise_sd,
            seed: self.seed,
            cache_dir,
            max_parallel: f.max_parallel,
            retry: RetryPolicy {
                max_attempts: f.retry_max_attempts,
                backoff_ms: f.retry_backoff_ms,
            },
            http: f.http.clone(),
        }
    }

    /// Months per distribution window: the longest history within the
    /// prompt's 60..=120 bounds that still leaves up to two years of rolling
    /// forecast months.
    pub fn distribution_window(&self, series_months: usize) -> usize {
        series_months.saturating_sub(24).clamp(60, 120)
    }

    /// Canonical serialized form (also the config snapshot written to the
    /// output directory).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration always serializes")
    }
}

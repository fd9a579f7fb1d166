//! Deterministic synthetic forecasters.
//!
//! These agents answer prompts from the numbers alone, reading the same CSV
//! attachments a live forecaster would see. Each is a known data-generating
//! process, so estimators can be validated by fitting what the agent was
//! configured to do:
//!
//! * extrapolator — scores stocks by exponentially decaying weights on past
//!   returns, the recoverable model behind the decay fit;
//! * reversal — bets against the latest week, the anti-extrapolation control;
//! * percentile oracle — answers distribution prompts with the window's
//!   empirical 10th/90th percentiles and mean, the calibrated baseline;
//! * noise — uniform random answers, the null forecaster.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{bundle_rng, Backend, ForecasterConfig};
use crate::calib::historical_stats;
use crate::econ::decay_weights;
use crate::error::{Error, Result};
use crate::panel::{return_ranks, ContestPanel};
use crate::prompt::{
    parse_grid_attachment, parse_monthly_attachment, render_chart_rank_response,
    render_distribution_response, render_rank_response, render_sentiment_response,
    DistributionForecast, PromptBundle, RankForecast, ResponseSchema, SentimentForecast,
};

/// Latent scores above/below this trigger a bullish/bearish sentiment call;
/// between them the agent answers neutral.
const SENTIMENT_DEAD_ZONE: f64 = 0.5;

fn check_params(lambda1: f64, lambda2: f64, noise_sd: f64) -> Result<()> {
    if !(lambda2 > 0.0 && lambda2 <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda2 must lie in (0, 1]; got {lambda2}"
        )));
    }
    if !lambda1.is_finite() || !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidConfig(
            "lambda1 must be finite and noise_sd non-negative".into(),
        ));
    }
    Ok(())
}

/// Decayed score per row: `5.5 + lambda1 * sum_s w_s * r_{t-s} + noise`,
/// where rows hold returns oldest to newest and `s = 0` is the newest.
fn decayed_scores(
    rows_oldest_first: &[Vec<f64>],
    lambda1: f64,
    lambda2: f64,
    noise_sd: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let lags = rows_oldest_first.first().map_or(0, Vec::len);
    let w = decay_weights(lambda2, lags);
    rows_oldest_first
        .iter()
        .map(|row| {
            let z: f64 = (0..lags).map(|s| w[s] * row[lags - 1 - s]).sum();
            let noise: f64 = if noise_sd > 0.0 {
                rng.sample::<f64, _>(StandardNormal) * noise_sd
            } else {
                0.0
            };
            5.5 + lambda1 * z + noise
        })
        .collect()
}

/// Latent extrapolator scores for every stock of a contest, using all the
/// panel's lag weeks.
pub fn extrapolator_scores(
    panel: &ContestPanel,
    lambda1: f64,
    lambda2: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    panel.validate()?;
    check_params(lambda1, lambda2, noise_sd)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(decayed_scores(
        &panel.returns,
        lambda1,
        lambda2,
        noise_sd,
        &mut rng,
    ))
}

/// The extrapolator agent's ranking: stocks ordered by their decayed scores,
/// stated with full confidence.
pub fn extrapolator_rank(
    panel: &ContestPanel,
    lambda1: f64,
    lambda2: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<RankForecast> {
    let scores = extrapolator_scores(panel, lambda1, lambda2, noise_sd, seed)?;
    let ranking = return_ranks(&panel.stock_ids, &scores)?;
    Ok(RankForecast {
        ranking,
        confidence: 1.0,
    })
}

/// The contrarian agent: best rank to the worst latest-week return.
pub fn reversal_rank(panel: &ContestPanel) -> Result<RankForecast> {
    panel.validate()?;
    let scores: Vec<f64> = panel.last_week_returns().iter().map(|r| -r).collect();
    let ranking = return_ranks(&panel.stock_ids, &scores)?;
    Ok(RankForecast {
        ranking,
        confidence: 1.0,
    })
}

/// Distribution forecast read straight off the window's history: empirical
/// 10th percentile, mean, and 90th percentile, in percent.
pub fn percentile_oracle(window_decimal: &[f64]) -> Result<DistributionForecast> {
    let hist = historical_stats(window_decimal)?;
    let forecast = DistributionForecast {
        low: hist.p10(),
        expected: hist.mean,
        high: hist.p90(),
    };
    forecast.validate()?;
    Ok(forecast)
}

fn attachment<'a>(bundle: &'a PromptBundle, name: &str) -> Result<&'a [u8]> {
    bundle
        .attachments
        .iter()
        .find(|a| a.name == name)
        .map(|a| a.payload.as_slice())
        .ok_or_else(|| {
            Error::InvalidData(format!(
                "bundle {} lacks required attachment {name}",
                bundle.id
            ))
        })
}

fn unsupported(backend: Backend, what: &str) -> Error {
    Error::UnsupportedSchema {
        backend: backend.id().to_string(),
        schema: what.to_string(),
    }
}

fn random_rank(ids: &[String], rng: &mut impl Rng, confidence: f64) -> Result<RankForecast> {
    let mut order: Vec<String> = ids.to_vec();
    order.shuffle(rng);
    let scores: Vec<f64> = ids
        .iter()
        .map(|id| {
            let pos = order
                .iter()
                .position(|o| o == id)
                .expect("shuffle keeps every id");
            -(pos as f64)
        })
        .collect();
    let ranking = return_ranks(ids, &scores)?;
    Ok(RankForecast {
        ranking,
        confidence,
    })
}

fn respond_rank(
    config: &ForecasterConfig,
    bundle: &PromptBundle,
    rng: &mut impl Rng,
) -> Result<String> {
    if bundle.has_images() {
        // Only the noise agent can answer image-only prompts; the numeric
        // agents have nothing to read.
        return match config.backend {
            Backend::Noise => {
                let confidence = rng.gen_range(0.0..=1.0);
                let f = random_rank(&bundle.anon_ids, rng, confidence)?;
                Ok(render_chart_rank_response(&f))
            }
            other => Err(unsupported(other, "rank (image attachments)")),
        };
    }
    let (ids, rows) = parse_grid_attachment(attachment(bundle, "returns.csv")?)?;
    let forecast = match config.backend {
        Backend::Extrapolator => {
            check_params(config.lambda1, config.lambda2, config.noise_sd)?;
            let scores =
                decayed_scores(&rows, config.lambda1, config.lambda2, config.noise_sd, rng);
            RankForecast {
                ranking: return_ranks(&ids, &scores)?,
                confidence: 1.0,
            }
        }
        Backend::Reversal => {
            let scores: Vec<f64> = rows
                .iter()
                .map(|r| -r.last().expect("non-empty grid row"))
                .collect();
            RankForecast {
                ranking: return_ranks(&ids, &scores)?,
                confidence: 1.0,
            }
        }
        Backend::Noise => {
            let confidence = rng.gen_range(0.0..=1.0);
            random_rank(&ids, rng, confidence)?
        }
        other => return Err(unsupported(other, "rank")),
    };
    Ok(render_rank_response(&forecast))
}

fn respond_sentiment(
    config: &ForecasterConfig,
    bundle: &PromptBundle,
    rng: &mut impl Rng,
) -> Result<String> {
    let returns = parse_monthly_attachment(attachment(bundle, "monthly_returns.csv")?)?;
    let forecast = match config.backend {
        Backend::Extrapolator => {
            check_params(config.lambda1, config.lambda2, config.noise_sd)?;
            let latent = decayed_scores(
                &[returns],
                config.lambda1,
                config.lambda2,
                config.noise_sd,
                rng,
            )[0] - 5.5;
            let prediction = if latent > SENTIMENT_DEAD_ZONE {
                1
            } else if latent < -SENTIMENT_DEAD_ZONE {
                -1
            } else {
                0
            };
            SentimentForecast {
                prediction,
                confidence: 1.0,
            }
        }
        Backend::Reversal => {
            let latent = -config.lambda1 * returns.last().expect("non-empty window");
            let prediction = if latent > SENTIMENT_DEAD_ZONE {
                1
            } else if latent < -SENTIMENT_DEAD_ZONE {
                -1
            } else {
                0
            };
            SentimentForecast {
                prediction,
                confidence: 1.0,
            }
        }
        Backend::Noise => SentimentForecast {
            prediction: *[-1i8, 0, 1].choose(rng).expect("non-empty choices"),
            confidence: rng.gen_range(0.0..=1.0),
        },
        other => return Err(unsupported(other, "sentiment")),
    };
    Ok(render_sentiment_response(&forecast))
}

fn respond_distribution(
    config: &ForecasterConfig,
    bundle: &PromptBundle,
    rng: &mut impl Rng,
) -> Result<String> {
    let returns = parse_monthly_attachment(attachment(bundle, "monthly_returns.csv")?)?;
    let forecast = match config.backend {
        Backend::PercentileOracle => percentile_oracle(&returns)?,
        Backend::Noise => {
            // History-blind guess: three draws around a vaguely plausible
            // monthly return, in percent.
            let mut draws: Vec<f64> = (0..3)
                .map(|_| 1.0 + 8.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            draws.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
            DistributionForecast {
                low: draws[0],
                expected: draws[1],
                high: draws[2],
            }
        }
        other => return Err(unsupported(other, "distribution")),
    };
    Ok(render_distribution_response(&forecast))
}

/// Computes a synthetic backend's raw response text for a bundle. Pure given
/// `(config, bundle)`: randomness comes from a ChaCha stream keyed by the
/// run seed and the prompt hash.
pub fn synthetic_respond(
    config: &ForecasterConfig,
    bundle: &PromptBundle,
    hash: &str,
) -> Result<String> {
    if config.backend == Backend::Http {
        return Err(Error::InvalidConfig("http backend is not synthetic".into()));
    }
    let mut rng = bundle_rng(config.seed, hash);
    match bundle.schema {
        ResponseSchema::Rank => respond_rank(config, bundle, &mut rng),
        ResponseSchema::Sentiment => respond_sentiment(config, bundle, &mut rng),
        ResponseSchema::Distribution => respond_distribution(config, bundle, &mut rng),
    }
}

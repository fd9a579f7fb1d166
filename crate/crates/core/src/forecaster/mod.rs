//! Forecaster backends behind one query interface.
//!
//! A forecaster is anything that answers a [`PromptBundle`] with raw text:
//! a live HTTP chat-completion endpoint, or one of four deterministic
//! synthetic agents used as estimator-recovery oracles (an extrapolator, a
//! reversal contrarian, a historical-percentile reader, and pure noise).
//!
//! Every answer is wrapped in a [`QueryRecord`] and content-addressed by a
//! hash of `(backend id, prompt text, attachment bytes)`; with a cache
//! directory configured, at most one network request ever happens per
//! `(backend, bundle)` pair and later runs replay records byte-identically
//! with no network traffic.

mod http;
mod synthetic;

pub use http::HttpConfig;
pub use synthetic::{
    extrapolator_rank, extrapolator_scores, percentile_oracle, reversal_rank, synthetic_respond,
};

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompt::{
    parse_distribution_response, parse_rank_response, parse_sentiment_response, PromptBundle,
    ResponseSchema,
};

/// Available forecaster implementations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Live chat-completion endpoint.
    Http,
    /// Scores stocks by exponentially decaying weights on lagged returns.
    Extrapolator,
    /// Ranks by the negative of the latest week's return.
    Reversal,
    /// Answers distribution prompts with the window's empirical percentiles.
    PercentileOracle,
    /// Uniform random answers; the null forecaster.
    Noise,
}

impl Backend {
    pub fn id(self) -> &'static str {
        match self {
            Backend::Http => "http",
            Backend::Extrapolator => "extrapolator",
            Backend::Reversal => "reversal",
            Backend::PercentileOracle => "percentile_oracle",
            Backend::Noise => "noise",
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(Backend::Http),
            "extrapolator" => Ok(Backend::Extrapolator),
            "reversal" => Ok(Backend::Reversal),
            "percentile_oracle" => Ok(Backend::PercentileOracle),
            "noise" => Ok(Backend::Noise),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}`; expected http, extrapolator, reversal, \
                 percentile_oracle, or noise"
            ))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Retry behaviour for transport failures; delay doubles per attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

/// Full forecaster configuration.
///
/// `lambda1`, `lambda2`, and `noise_sd` parameterize the extrapolator agent
/// (score sensitivity, decay in `(0, 1]`, and score noise); `seed` drives all
/// synthetic randomness. Defaults reproduce the reference extrapolator
/// calibration used across the test suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    pub backend: Backend,
    pub lambda1: f64,
    pub lambda2: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Record store; `None` disables caching (every query recomputes).
    pub cache_dir: Option<PathBuf>,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    /// Required when `backend` is [`Backend::Http`].
    pub http: Option<HttpConfig>,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            backend: Backend::Extrapolator,
            lambda1: 16.98,
            lambda2: 0.28,
            noise_sd: 0.5,
            seed: 0,
            cache_dir: None,
            max_parallel: 4,
            retry: RetryPolicy::default(),
            http: None,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda2 > 0.0 && self.lambda2 <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda2 must lie in (0, 1]; got {}",
                self.lambda2
            )));
        }
        if !self.lambda1.is_finite() {
            return Err(Error::InvalidConfig("lambda1 must be finite".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be non-negative; got {}",
                self.noise_sd
            )));
        }
        if self.max_parallel < 1 {
            return Err(Error::InvalidConfig(
                "max_parallel must be at least 1".into(),
            ));
        }
        if self.backend == Backend::Http && self.http.is_none() {
            return Err(Error::InvalidConfig(
                "http backend requires an [http] configuration block".into(),
            ));
        }
        Ok(())
    }
}

/// Whether a recorded response parsed into its expected schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseOutcome {
    Ok,
    Rejected { reason: String },
}

/// Audit record of one forecaster query; the cache stores exactly this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Content address over `(backend id, prompt text, attachment bytes)`.
    pub prompt_hash: String,
    pub backend_id: String,
    pub bundle_id: String,
    pub schema: String,
    /// What was sent: the HTTP request body for the live backend, or the
    /// prompt text plus an attachment manifest for synthetic ones.
    pub request: String,
    pub response: String,
    /// RFC 3339, live backend only; synthetic responses carry no timestamp so
    /// records are bit-reproducible.
    pub timestamp: Option<String>,
    pub parse_outcome: ParseOutcome,
}

/// Content hash of a bundle under a backend: SHA-256 over length-prefixed
/// fields so `("ab", "c")` and `("a", "bc")` cannot collide.
pub fn prompt_hash(backend_id: &str, bundle: &PromptBundle) -> String {
    let mut hasher = Sha256::new();
    let mut push = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    push(backend_id.as_bytes());
    push(bundle.text.as_bytes());
    for a in &bundle.attachments {
        push(a.name.as_bytes());
        push(&a.payload);
    }
    hex::encode(hasher.finalize())
}

/// Stable per-bundle RNG: splits the run seed by the prompt hash.
pub(crate) fn bundle_rng(seed: u64, hash: &str) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(hash.as_bytes());
    rand_chacha::ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.json"))
}

/// Loads a cached record, verifying it decodes and that its stored hash
/// matches its file name.
pub fn cache_lookup(dir: &Path, hash: &str) -> Result<Option<QueryRecord>> {
    let path = cache_path(dir, hash);
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path.display().to_string(), e)),
    };
    let record: QueryRecord = serde_json::from_slice(&bytes).map_err(|e| Error::CacheCorrupt {
        path: path.display().to_string(),
        msg: format!("record does not decode: {e}"),
    })?;
    if record.prompt_hash != hash {
        return Err(Error::CacheCorrupt {
            path: path.display().to_string(),
            msg: format!(
                "stored hash {} does not match file name",
                record.prompt_hash
            ),
        });
    }
    Ok(Some(record))
}

/// Stores a record atomically (write to a temporary file, then rename), so a
/// concurrent reader never sees a half-written record.
pub fn cache_store(dir: &Path, record: &QueryRecord) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = cache_path(dir, &record.prompt_hash);
    let tmp = dir.join(format!(
        "{}.tmp-{}-{:?}",
        record.prompt_hash,
        std::process::id(),
        std::thread::current().id()
    ));
    let body = serde_json::to_vec_pretty(record).expect("records always serialize");
    std::fs::write(&tmp, body).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Audit-trail request text for non-HTTP backends: the prompt text followed
/// by one line per attachment with its size and content hash.
pub fn attachment_manifest(bundle: &PromptBundle) -> String {
    let mut s = bundle.text.clone();
    for a in &bundle.attachments {
        let mut h = Sha256::new();
        h.update(&a.payload);
        s.push_str(&format!(
            "\n[attachment {} ({} bytes, sha256 {})]",
            a.name,
            a.payload.len(),
            hex::encode(h.finalize())
        ));
    }
    s
}

/// Classifies a raw response against the bundle's expected schema. The
/// result is recorded, not enforced: rejected responses stay on disk and are
/// excluded (and tallied) at analysis time.
pub fn trial_parse(bundle: &PromptBundle, response: &str) -> ParseOutcome {
    let outcome = match bundle.schema {
        ResponseSchema::Rank => parse_rank_response(response, &bundle.anon_ids)
            .map(|_| ())
            .err(),
        ResponseSchema::Sentiment => parse_sentiment_response(response).map(|_| ()).err(),
        ResponseSchema::Distribution => parse_distribution_response(response).map(|_| ()).err(),
    };
    match outcome {
        None => ParseOutcome::Ok,
        Some(e) => ParseOutcome::Rejected {
            reason: e.to_string(),
        },
    }
}

/// Answers one bundle, consulting and populating the cache.
///
/// Cache hits return the stored record untouched. Misses ask the backend,
/// annotate the raw text with a trial parse, store the record, then return
/// it.
pub fn query(config: &ForecasterConfig, bundle: &PromptBundle) -> Result<QueryRecord> {
    config.validate()?;
    bundle.validate()?;
    let hash = prompt_hash(config.backend.id(), bundle);
    if let Some(dir) = &config.cache_dir {
        if let Some(record) = cache_lookup(dir, &hash)? {
            return Ok(record);
        }
    }
    let (request, response, timestamp) = match config.backend {
        Backend::Http => {
            let http_cfg = config.http.as_ref().expect("validated http config");
            let (request, response) = http::send(http_cfg, &config.retry, bundle)?;
            (request, response, Some(chrono::Utc::now().to_rfc3339()))
        }
        _ => {
            let response = synthetic_respond(config, bundle, &hash)?;
            (attachment_manifest(bundle), response, None)
        }
    };
    let record = QueryRecord {
        prompt_hash: hash,
        backend_id: config.backend.id().to_string(),
        bundle_id: bundle.id.clone(),
        schema: bundle.schema.as_str().to_string(),
        parse_outcome: trial_parse(bundle, &response),
        request,
        response,
        timestamp,
    };
    if let Some(dir) = &config.cache_dir {
        cache_store(dir, &record)?;
    }
    Ok(record)
}

/// Answers many bundles with up to `max_parallel` worker threads, returning
/// records in input order. Results do not depend on scheduling: each record
/// is a pure function of `(config, bundle)`.
pub fn query_many(config: &ForecasterConfig, bundles: &[PromptBundle]) -> Result<Vec<QueryRecord>> {
    config.validate()?;
    if bundles.is_empty() {
        return Ok(Vec::new());
    }
    let workers = config.max_parallel.min(bundles.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<QueryRecord>>>> =
        bundles.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= bundles.len() {
                    break;
                }
                let result = query(config, &bundles[i]);
                *slots[i].lock().expect("slot lock never poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot lock never poisoned")
                .expect("every index visited by a worker")
        })
        .collect()
}

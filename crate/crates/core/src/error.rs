//! Crate-wide error types.
//!
//! Errors are grouped so that callers (in particular the CLI) can map them to
//! coarse failure classes: configuration, data, network, and estimation.

use thiserror::Error;

/// Errors raised while validating or parsing a forecaster response.
///
/// Each malformed-response shape gets its own variant so tests and callers can
/// assert on the precise failure, not just a message string.
#[derive(Debug, Error, PartialEq)]
pub enum ResponseError {
    /// The raw text contains no balanced `{ ... }` object at all.
    #[error("no complete JSON object found in response")]
    NoJsonObject,
    /// A balanced candidate object was found but is not valid JSON.
    #[error("malformed JSON in response: {0}")]
    MalformedJson(String),
    /// The parsed object lacks a required field.
    #[error("response is missing required field `{0}`")]
    MissingField(String),
    /// A rank key is outside the expected `"1"`..`"n"` set.
    #[error("rank key `{got}` outside expected \"1\"..\"{expected}\"")]
    BadRankKey { expected: usize, got: String },
    /// The same stock id occupies two rank slots.
    #[error("ranking lists stock id `{0}` more than once")]
    DuplicateStockId(String),
    /// A stock in the contest never appears in the ranking.
    #[error("ranking omits stock id `{0}`")]
    MissingStockId(String),
    /// The ranking names a stock id that was not part of the prompt.
    #[error("ranking names unknown stock id `{0}`")]
    UnknownStockId(String),
    /// Confidence outside `[0, 1]`; out-of-range values are rejected, never
    /// clamped.
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    /// Sentiment prediction outside `{-1, 0, 1}`.
    #[error("prediction {0} not in {{-1, 0, 1}}")]
    InvalidPrediction(i64),
    /// A field that must be numeric (optionally `%`-suffixed) is not.
    #[error("field `{field}` is not numeric: `{value}`")]
    NonNumericField { field: String, value: String },
    /// Distribution forecast with `low > expected` or `expected > high`.
    #[error("interval ordering violated: low={low}, expected={expected}, high={high}")]
    IntervalOrdering { low: f64, expected: f64, high: f64 },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A data file failed to parse; names the file and 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    /// Structurally valid data that violates a documented invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A prompt or attachment would leak an identifier or date.
    #[error("anonymization violation: {0}")]
    Anonymization(String),
    /// A forecaster response failed validation.
    #[error("response parse error: {0}")]
    Response(#[from] ResponseError),
    /// The design matrix is rank deficient; the offending columns are named.
    #[error("rank-deficient design; offending columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    /// Any other estimation failure (dimension mismatch, too few clusters, ...).
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Transport-level HTTP failure after exhausting retries.
    #[error("network transport error after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },
    /// The remote endpoint rejected our credentials.
    #[error("authentication failure: {0}")]
    Auth(String),
    /// A cached query record does not match its content address.
    #[error("cache corruption at {path}: {msg}")]
    CacheCorrupt { path: String, msg: String },
    /// A synthetic backend was asked to answer a schema it cannot produce.
    #[error("backend `{backend}` does not support `{schema}` prompts")]
    UnsupportedSchema { backend: String, schema: String },
    /// An I/O failure, annotated with the path involved.
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the path it concerns.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Shorthand for a parse error at a known line.
    pub fn parse(path: impl Into<String>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

//! Prompt construction and response parsing for the forecast protocol.
//!
//! A [`PromptBundle`] is everything a forecaster sees: the prompt text, CSV or
//! SVG attachments, and the expected response schema. Builders are
//! deterministic — the same panel always produces the same bytes — and
//! anonymizing: stocks appear only as `stock 1`..`stock 10` in presentation
//! order, returns carry no dates, and every built bundle is scanned against
//! the panel's real identifiers before it leaves this module.
//!
//! Parsing is strict where it matters and tolerant where forecasters are
//! sloppy: surrounding prose is allowed (the first balanced JSON object is
//! extracted), numbers may arrive as `%`-suffixed strings, but duplicate or
//! missing stocks, out-of-range confidences, and inverted intervals are
//! rejected, never repaired.

mod parse;
mod templates;

pub use parse::{
    extract_first_json_object, parse_distribution_response, parse_rank_response,
    parse_sentiment_response, render_chart_rank_response, render_distribution_response,
    render_rank_response, render_sentiment_response,
};
pub use templates::{CHART_TEMPLATE, DISTRIBUTION_TEMPLATE, RANK_TEMPLATE, SENTIMENT_TEMPLATE};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ContestPanel, MonthlySeries, RankVector, STOCKS_PER_CONTEST, VALID_LAGS};

/// Admissible window lengths, in months, for distribution prompts.
pub const DISTRIBUTION_WINDOW_MONTHS: std::ops::RangeInclusive<usize> = 60..=120;

/// Response shape a prompt elicits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseSchema {
    Rank,
    Sentiment,
    Distribution,
}

impl ResponseSchema {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseSchema::Rank => "rank",
            ResponseSchema::Sentiment => "sentiment",
            ResponseSchema::Distribution => "distribution",
        }
    }
}

/// Attachment payload format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttachmentKind {
    Csv,
    Svg,
}

/// A named file handed to the forecaster alongside the prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub kind: AttachmentKind,
    pub payload: Vec<u8>,
}

/// A complete prompt: text, attachments, schema, and the anonymous ids in
/// presentation order (`stock 1` is the panel's first stock, and so on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Caller-side identifier (contest id or series id); not shown to the
    /// forecaster and excluded from the content hash.
    pub id: String,
    pub schema: ResponseSchema,
    pub text: String,
    pub attachments: Vec<Attachment>,
    pub anon_ids: Vec<String>,
}

impl PromptBundle {
    /// Structural check: non-empty text and unique attachment names.
    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::InvalidData(format!(
                "bundle {} has empty prompt text",
                self.id
            )));
        }
        let names: BTreeSet<&String> = self.attachments.iter().map(|a| &a.name).collect();
        if names.len() != self.attachments.len() {
            return Err(Error::InvalidData(format!(
                "bundle {} repeats an attachment name",
                self.id
            )));
        }
        Ok(())
    }

    /// True if any attachment is an image (chart-style prompt).
    pub fn has_images(&self) -> bool {
        self.attachments
            .iter()
            .any(|a| a.kind == AttachmentKind::Svg)
    }
}

/// Parsed ranking response: a permutation over the prompted stock ids plus a
/// stated confidence. Ranks use the internal convention `n` = best; the wire
/// format's key `"1"` (highest return) maps to rank `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankForecast {
    pub ranking: RankVector,
    /// Stated probability in `[0, 1]`.
    pub confidence: f64,
}

impl RankForecast {
    pub fn validate(&self) -> Result<()> {
        self.ranking.validate()?;
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(Error::InvalidData(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Parsed market-direction response: +1 bullish, 0 neutral, -1 bearish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentForecast {
    pub prediction: i8,
    pub confidence: f64,
}

impl SentimentForecast {
    pub fn validate(&self) -> Result<()> {
        if ![-1, 0, 1].contains(&self.prediction) {
            return Err(Error::InvalidData(format!(
                "prediction {} not in {{-1, 0, 1}}",
                self.prediction
            )));
        }
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(Error::InvalidData(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Parsed distribution response, percent units: a 1-in-10 lower bound, the
/// expected return, and a 1-in-10 upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionForecast {
    pub low: f64,
    pub expected: f64,
    pub high: f64,
}

impl DistributionForecast {
    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.expected.is_finite() && self.high.is_finite()) {
            return Err(Error::InvalidData(
                "non-finite distribution forecast".into(),
            ));
        }
        if self.low > self.expected || self.expected > self.high {
            return Err(Error::InvalidData(format!(
                "interval ordering violated: low={}, expected={}, high={}",
                self.low, self.expected, self.high
            )));
        }
        Ok(())
    }
}

/// Anonymous label for presentation slot `i` (0-based).
pub fn anon_id(i: usize) -> String {
    format!("stock {}", i + 1)
}

fn anon_ids(n: usize) -> Vec<String> {
    (0..n).map(anon_id).collect()
}

/// Builds the `returns.csv` grid attachment: ten rows keyed by anonymous ids,
/// the most recent `lags` weekly returns per row, columns labelled relative
/// to the forecast week (`t-{lags}` oldest to `t-1` newest).
pub fn grid_attachment(panel: &ContestPanel, lags: usize) -> Attachment {
    let depth = panel.n_lags();
    let mut csv = String::from("stock id");
    for s in (1..=lags).rev() {
        let _ = write!(csv, ",t-{s}");
    }
    csv.push('\n');
    for (i, row) in panel.returns.iter().enumerate() {
        csv.push_str(&anon_id(i));
        for w in &row[depth - lags..] {
            let _ = write!(csv, ",{w:.6}");
        }
        csv.push('\n');
    }
    Attachment {
        name: "returns.csv".into(),
        kind: AttachmentKind::Csv,
        payload: csv.into_bytes(),
    }
}

/// Parses a `returns.csv` grid back into `(anonymous ids, rows)` with row
/// columns ordered oldest to newest. Used by synthetic backends, which read
/// exactly what a live forecaster would.
pub fn parse_grid_attachment(payload: &[u8]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::str::from_utf8(payload)
        .map_err(|_| Error::InvalidData("grid attachment is not UTF-8".into()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidData("empty grid attachment".into()))?;
    let cols = header.split(',').count();
    if cols < 2 || !header.starts_with("stock id,") {
        return Err(Error::InvalidData(
            "grid attachment header malformed".into(),
        ));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().expect("split yields at least one field");
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!("grid attachment has non-numeric cell `{f}`"))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != cols - 1 {
            return Err(Error::InvalidData(format!(
                "grid attachment row for {id} has {} cells; expected {}",
                row.len(),
                cols - 1
            )));
        }
        ids.push(id.to_string());
        rows.push(row);
    }
    if ids.is_empty() {
        return Err(Error::InvalidData(
            "grid attachment has no data rows".into(),
        ));
    }
    Ok((ids, rows))
}

/// Builds the `monthly_returns.csv` attachment for a window of `n` months,
/// labelled `t-{n}` (oldest) to `t-1` (newest).
pub fn monthly_attachment(window: &MonthlySeries) -> Attachment {
    let n = window.len();
    let mut csv = String::from("month,return\n");
    for (j, r) in window.returns.iter().enumerate() {
        let _ = writeln!(csv, "t-{},{r:.6}", n - j);
    }
    Attachment {
        name: "monthly_returns.csv".into(),
        kind: AttachmentKind::Csv,
        payload: csv.into_bytes(),
    }
}

/// Parses a `monthly_returns.csv` attachment back into returns, oldest first.
pub fn parse_monthly_attachment(payload: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(payload)
        .map_err(|_| Error::InvalidData("monthly attachment is not UTF-8".into()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("month,return") => {}
        _ => {
            return Err(Error::InvalidData(
                "monthly attachment header malformed".into(),
            ))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (_, value) = line.split_once(',').ok_or_else(|| {
            Error::InvalidData(format!("monthly attachment row `{line}` malformed"))
        })?;
        out.push(value.parse::<f64>().map_err(|_| {
            Error::InvalidData(format!(
                "monthly attachment has non-numeric return `{value}`"
            ))
        })?);
    }
    if out.is_empty() {
        return Err(Error::InvalidData(
            "monthly attachment has no data rows".into(),
        ));
    }
    Ok(out)
}

fn date_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b\d{4}-\d{2}(-\d{2})?\b|\b\d{1,2}/\d{1,2}/\d{2,4}\b")
            .expect("valid date regex")
    })
}

fn find_denied(haystack: &str, entry: &str) -> bool {
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(entry) {
        let abs = start + pos;
        let before_ok = haystack[..abs]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[abs + entry.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        start = abs + entry.len().max(1);
    }
    false
}

/// Scans every piece of a bundle (text, attachment names, attachment bodies)
/// for denied identifiers and date-like tokens. Deny entries match on word
/// boundaries; an empty entry is ignored. This runs automatically inside
/// every builder with the panel's real stock ids as the deny list, and again
/// in the HTTP backend with the operator-configured list.
pub fn check_anonymized(bundle: &PromptBundle, deny: &[String]) -> Result<()> {
    let mut pieces: Vec<(String, String)> = vec![("prompt text".into(), bundle.text.clone())];
    for a in &bundle.attachments {
        pieces.push((format!("attachment name `{}`", a.name), a.name.clone()));
        pieces.push((
            format!("attachment `{}`", a.name),
            String::from_utf8_lossy(&a.payload).into_owned(),
        ));
    }
    for (where_, content) in &pieces {
        for entry in deny {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            if find_denied(content, entry) {
                return Err(Error::Anonymization(format!(
                    "denied identifier `{entry}` appears in {where_}"
                )));
            }
        }
        if let Some(m) = date_pattern().find(content) {
            return Err(Error::Anonymization(format!(
                "date-like token `{}` appears in {where_}",
                m.as_str()
            )));
        }
    }
    Ok(())
}

fn check_rank_panel(panel: &ContestPanel, lags: usize) -> Result<()> {
    panel.validate()?;
    if !VALID_LAGS.contains(&lags) {
        return Err(Error::InvalidData(format!(
            "lag depth {} not in {:?}",
            lags, VALID_LAGS
        )));
    }
    if panel.n_lags() < lags {
        return Err(Error::InvalidData(format!(
            "contest {} has only {} lag weeks; {} requested",
            panel.contest_id,
            panel.n_lags(),
            lags
        )));
    }
    Ok(())
}

/// Builds the CSV-grid ranking prompt for one contest.
pub fn build_rank_prompt(panel: &ContestPanel, lags: usize) -> Result<PromptBundle> {
    check_rank_panel(panel, lags)?;
    let bundle = PromptBundle {
        id: panel.contest_id.clone(),
        schema: ResponseSchema::Rank,
        text: RANK_TEMPLATE.replace("{LAGS}", &lags.to_string()),
        attachments: vec![grid_attachment(panel, lags)],
        anon_ids: anon_ids(STOCKS_PER_CONTEST),
    };
    bundle.validate()?;
    check_anonymized(&bundle, &panel.stock_ids)?;
    Ok(bundle)
}

/// Builds the chart ranking prompt for one contest from pre-rendered charts
/// (see [`crate::chart::contest_charts`]): one SVG per stock, file names
/// carrying the anonymous ids.
pub fn build_chart_prompt(
    panel: &ContestPanel,
    lags: usize,
    charts: Vec<(String, Vec<u8>)>,
) -> Result<PromptBundle> {
    check_rank_panel(panel, lags)?;
    if charts.len() != STOCKS_PER_CONTEST {
        return Err(Error::InvalidData(format!(
            "contest {} has {} charts; expected {}",
            panel.contest_id,
            charts.len(),
            STOCKS_PER_CONTEST
        )));
    }
    let attachments: Vec<Attachment> = charts
        .into_iter()
        .map(|(name, payload)| Attachment {
            name,
            kind: AttachmentKind::Svg,
            payload,
        })
        .collect();
    let bundle = PromptBundle {
        id: panel.contest_id.clone(),
        schema: ResponseSchema::Rank,
        text: CHART_TEMPLATE.replace("{LAGS}", &lags.to_string()),
        attachments,
        anon_ids: anon_ids(STOCKS_PER_CONTEST),
    };
    bundle.validate()?;
    check_anonymized(&bundle, &panel.stock_ids)?;
    Ok(bundle)
}

/// Builds the market-direction prompt from a twelve-month window.
pub fn build_sentiment_prompt(window: &MonthlySeries) -> Result<PromptBundle> {
    window.validate()?;
    if window.len() != 12 {
        return Err(Error::InvalidData(format!(
            "sentiment prompt needs exactly 12 months, got {}",
            window.len()
        )));
    }
    let bundle = PromptBundle {
        id: format!(
            "{}_{}",
            window.series_id,
            window.months.last().expect("validated non-empty")
        ),
        schema: ResponseSchema::Sentiment,
        text: SENTIMENT_TEMPLATE.to_string(),
        attachments: vec![monthly_attachment(window)],
        anon_ids: Vec::new(),
    };
    bundle.validate()?;
    check_anonymized(&bundle, std::slice::from_ref(&window.series_id))?;
    Ok(bundle)
}

/// Builds the return-distribution prompt from a 60-120 month window.
pub fn build_distribution_prompt(window: &MonthlySeries) -> Result<PromptBundle> {
    window.validate()?;
    if !DISTRIBUTION_WINDOW_MONTHS.contains(&window.len()) {
        return Err(Error::InvalidData(format!(
            "distribution prompt needs {}..={} months, got {}",
            DISTRIBUTION_WINDOW_MONTHS.start(),
            DISTRIBUTION_WINDOW_MONTHS.end(),
            window.len()
        )));
    }
    let bundle = PromptBundle {
        id: format!(
            "{}_{}",
            window.series_id,
            window.months.last().expect("validated non-empty")
        ),
        schema: ResponseSchema::Distribution,
        text: DISTRIBUTION_TEMPLATE.replace("{MONTHS}", &window.len().to_string()),
        attachments: vec![monthly_attachment(window)],
        anon_ids: Vec::new(),
    };
    bundle.validate()?;
    check_anonymized(&bundle, std::slice::from_ref(&window.series_id))?;
    Ok(bundle)
}

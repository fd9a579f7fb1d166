//! Calibration analysis of distribution forecasts: historical return
//! distributions, paired bias t-tests, interval coverage, and histograms.
//!
//! Everything in this module works in percent units (a value of `1.9` means
//! +1.9%), matching how distribution forecasts are elicited. The only decimal
//! input is the raw monthly window handed to [`historical_stats`], which is
//! converted exactly once on entry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::prompt::DistributionForecast;

/// Summary of a historical monthly-return window, percent units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalDistribution {
    pub min: f64,
    /// Deciles p10, p20, ..., p90.
    pub deciles: [f64; 9],
    pub max: f64,
    pub mean: f64,
    pub n_months: usize,
}

impl HistoricalDistribution {
    pub fn p10(&self) -> f64 {
        self.deciles[0]
    }

    pub fn p90(&self) -> f64 {
        self.deciles[8]
    }
}

/// Percentile of a sorted slice by linear interpolation: with `h = (n-1)p + 1`
/// (1-based), the value is `x_floor(h) + (h - floor(h)) * (x_ceil(h) - x_floor(h))`.
///
/// For the sorted values `1..=10`, `p = 0.1` gives 1.9 and `p = 0.9` gives 9.1.
pub fn percentile_interp(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidData("percentile of an empty slice".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidData(format!(
            "percentile p = {p} outside [0, 1]"
        )));
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidData(
            "percentile input must be sorted ascending".into(),
        ));
    }
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p + 1.0;
    let lo = h.floor() as usize;
    let frac = h - h.floor();
    if lo >= n {
        return Ok(sorted[n - 1]);
    }
    let base = sorted[lo - 1];
    let next = sorted[lo.min(n - 1)];
    Ok(base + frac * (next - base))
}

/// Summarises a window of decimal monthly returns into percent-unit
/// min/decile/max statistics. Requires at least two months.
pub fn historical_stats(window_decimal: &[f64]) -> Result<HistoricalDistribution> {
    if window_decimal.len() < 2 {
        return Err(Error::InvalidData(format!(
            "historical window has {} months; need at least 2",
            window_decimal.len()
        )));
    }
    if window_decimal.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidData(
            "historical window has a non-finite return".into(),
        ));
    }
    let mut sorted: Vec<f64> = window_decimal.iter().map(|r| r * 100.0).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut deciles = [0.0; 9];
    for (i, d) in deciles.iter_mut().enumerate() {
        *d = percentile_interp(&sorted, (i as f64 + 1.0) / 10.0)?;
    }
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(HistoricalDistribution {
        min: sorted[0],
        deciles,
        max: sorted[sorted.len() - 1],
        mean,
        n_months: sorted.len(),
    })
}

/// One paired t-test of a forecast field against a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTest {
    pub label: String,
    pub mean_diff: f64,
    pub t_stat: f64,
    /// Two-sided p-value from the t distribution with n-1 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

fn paired_t(label: &str, diffs: &[f64]) -> Result<BiasTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "paired t-test `{label}` needs at least 2 observations, got {n}"
        )));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let (t_stat, p_value) = if sd == 0.0 {
        // Identical differences: a zero mean is perfectly unbiased, anything
        // else is infinitely significant.
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY * mean.signum(), 0.0)
        }
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
            .map_err(|e| Error::Estimation(format!("t distribution: {e}")))?;
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Ok(BiasTest {
        label: label.to_string(),
        mean_diff: mean,
        t_stat,
        p_value,
        n,
    })
}

fn check_aligned(
    forecasts: &[DistributionForecast],
    historical: &[HistoricalDistribution],
    realized_pct: &[f64],
) -> Result<()> {
    if forecasts.is_empty() {
        return Err(Error::InvalidData("no forecasts supplied".into()));
    }
    if forecasts.len() != historical.len() || forecasts.len() != realized_pct.len() {
        return Err(Error::InvalidData(format!(
            "misaligned inputs: {} forecasts, {} historical windows, {} realized returns",
            forecasts.len(),
            historical.len(),
            realized_pct.len()
        )));
    }
    for f in forecasts {
        f.validate()?;
    }
    if realized_pct.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidData("non-finite realized return".into()));
    }
    Ok(())
}

/// The four paired bias tests: expected vs historical mean, expected vs
/// realized, low vs historical p10, and high vs historical p90.
pub fn bias_tests(
    forecasts: &[DistributionForecast],
    historical: &[HistoricalDistribution],
    realized_pct: &[f64],
) -> Result<Vec<BiasTest>> {
    check_aligned(forecasts, historical, realized_pct)?;
    let expected_vs_mean: Vec<f64> = forecasts
        .iter()
        .zip(historical)
        .map(|(f, h)| f.expected - h.mean)
        .collect();
    let expected_vs_realized: Vec<f64> = forecasts
        .iter()
        .zip(realized_pct)
        .map(|(f, r)| f.expected - r)
        .collect();
    let low_vs_p10: Vec<f64> = forecasts
        .iter()
        .zip(historical)
        .map(|(f, h)| f.low - h.p10())
        .collect();
    let high_vs_p90: Vec<f64> = forecasts
        .iter()
        .zip(historical)
        .map(|(f, h)| f.high - h.p90())
        .collect();
    Ok(vec![
        paired_t("Expected - historical mean", &expected_vs_mean)?,
        paired_t("Expected - realized", &expected_vs_realized)?,
        paired_t("Low - historical p10", &low_vs_p10)?,
        paired_t("High - historical p90", &high_vs_p90)?,
    ])
}

/// Interval coverage counts for the forecast interval and, as a benchmark,
/// the historical p10-p90 interval. Counts, not percentages, are stored so
/// the below/within/above triple partitions the sample exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub n: usize,
    pub below: usize,
    pub within: usize,
    pub above: usize,
    pub hist_below: usize,
    pub hist_within: usize,
    pub hist_above: usize,
}

impl CoverageStats {
    pub fn pct_below(&self) -> f64 {
        self.below as f64 * 100.0 / self.n as f64
    }

    pub fn pct_within(&self) -> f64 {
        self.within as f64 * 100.0 / self.n as f64
    }

    pub fn pct_above(&self) -> f64 {
        self.above as f64 * 100.0 / self.n as f64
    }

    pub fn hist_pct_below(&self) -> f64 {
        self.hist_below as f64 * 100.0 / self.n as f64
    }

    pub fn hist_pct_within(&self) -> f64 {
        self.hist_within as f64 * 100.0 / self.n as f64
    }

    pub fn hist_pct_above(&self) -> f64 {
        self.hist_above as f64 * 100.0 / self.n as f64
    }

    /// Total of the three shares, computed from the count identity so it is
    /// exactly 100 whenever the counts partition the sample.
    pub fn pct_total(&self) -> f64 {
        (self.below + self.within + self.above) as f64 * 100.0 / self.n as f64
    }
}

/// Classifies each realized return against its forecast interval (strictly
/// below `low`, inclusively within `[low, high]`, strictly above `high`) and
/// against the historical p10-p90 interval.
pub fn coverage_stats(
    forecasts: &[DistributionForecast],
    historical: &[HistoricalDistribution],
    realized_pct: &[f64],
) -> Result<CoverageStats> {
    check_aligned(forecasts, historical, realized_pct)?;
    let mut stats = CoverageStats {
        n: forecasts.len(),
        below: 0,
        within: 0,
        above: 0,
        hist_below: 0,
        hist_within: 0,
        hist_above: 0,
    };
    for ((f, h), &r) in forecasts.iter().zip(historical).zip(realized_pct) {
        if r < f.low {
            stats.below += 1;
        } else if r > f.high {
            stats.above += 1;
        } else {
            stats.within += 1;
        }
        if r < h.p10() {
            stats.hist_below += 1;
        } else if r > h.p90() {
            stats.hist_above += 1;
        } else {
            stats.hist_within += 1;
        }
    }
    debug_assert_eq!(stats.below + stats.within + stats.above, stats.n);
    Ok(stats)
}

/// A fixed-width histogram. Bin `i` covers
/// `[first_edge + i*bin_width, first_edge + (i+1)*bin_width)`: a value that
/// falls exactly on an edge belongs to the upper bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub first_edge: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_left,bin_right,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let left = self.first_edge + i as f64 * self.bin_width;
            let right = self.first_edge + (i as f64 + 1.0) * self.bin_width;
            out.push_str(&format!("{left:.4},{right:.4},{c}\n"));
        }
        out
    }

    /// A minimal deterministic SVG bar chart.
    pub fn to_svg(&self, title: &str) -> Vec<u8> {
        let (w, h) = (640.0, 320.0);
        let (left, right, top, bottom) = (48.0, 628.0, 28.0, 296.0);
        let max_count = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let n_bins = self.counts.len().max(1) as f64;
        let slot = (right - left) / n_bins;
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        ));
        svg.push_str(&format!(
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
            w / 2.0,
            title
        ));
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\" stroke-width=\"1\"/>\n"
        ));
        for (i, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let bar_h = (c as f64 / max_count) * (bottom - top);
            let x = left + i as f64 * slot + slot * 0.1;
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>\n",
                x,
                bottom - bar_h,
                slot * 0.8,
                bar_h
            ));
        }
        let label_left = self.first_edge;
        let label_right = self.first_edge + self.counts.len() as f64 * self.bin_width;
        svg.push_str(&format!(
            "<text x=\"{left}\" y=\"312\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{label_left:.1}</text>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{right}\" y=\"312\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{label_right:.1}</text>\n"
        ));
        svg.push_str("</svg>\n");
        svg.into_bytes()
    }
}

/// Bins `values` with the edge-goes-to-upper-bin rule.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidData("histogram of no values".into()));
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidData(format!(
            "bin width {bin_width} must be positive"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "histogram input has a non-finite value".into(),
        ));
    }
    let idx_of = |v: f64| (v / bin_width).floor() as i64;
    let min_idx = values.iter().map(|&v| idx_of(v)).min().expect("non-empty");
    let max_idx = values.iter().map(|&v| idx_of(v)).max().expect("non-empty");
    let mut counts = vec![0u64; (max_idx - min_idx + 1) as usize];
    for &v in values {
        counts[(idx_of(v) - min_idx) as usize] += 1;
    }
    Ok(Histogram {
        bin_width,
        first_edge: min_idx as f64 * bin_width,
        counts,
    })
}

/// Histograms of the forecast fields against their historical benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastHistograms {
    pub low_minus_p10: Histogram,
    pub expected_minus_mean: Histogram,
    pub high_minus_p90: Histogram,
    pub expected: Histogram,
    /// Share of forecasts with a strictly negative expected return, percent.
    pub share_expected_negative: f64,
}

/// Builds the benchmark-difference and raw-expected histograms.
pub fn forecast_histograms(
    forecasts: &[DistributionForecast],
    historical: &[HistoricalDistribution],
    bin_width: f64,
) -> Result<ForecastHistograms> {
    if forecasts.is_empty() || forecasts.len() != historical.len() {
        return Err(Error::InvalidData(format!(
            "misaligned inputs: {} forecasts, {} historical windows",
            forecasts.len(),
            historical.len()
        )));
    }
    for f in forecasts {
        f.validate()?;
    }
    let low: Vec<f64> = forecasts
        .iter()
        .zip(historical)
        .map(|(f, h)| f.low - h.p10())
        .collect();
    let exp: Vec<f64> = forecasts
        .iter()
        .zip(historical)
        .map(|(f, h)| f.expected - h.mean)
        .collect();
    let high: Vec<f64> = forecasts
        .iter()
        .zip(historical)
        .map(|(f, h)| f.high - h.p90())
        .collect();
    let expected: Vec<f64> = forecasts.iter().map(|f| f.expected).collect();
    let n_negative = expected.iter().filter(|&&e| e < 0.0).count();
    Ok(ForecastHistograms {
        low_minus_p10: histogram(&low, bin_width)?,
        expected_minus_mean: histogram(&exp, bin_width)?,
        high_minus_p90: histogram(&high, bin_width)?,
        expected: histogram(&expected, bin_width)?,
        share_expected_negative: n_negative as f64 * 100.0 / forecasts.len() as f64,
    })
}

/// Tally of responses that failed validation and were excluded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionTally {
    pub total: usize,
    pub rejected: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl RejectionTally {
    pub fn record_ok(&mut self) {
        self.total += 1;
    }

    pub fn record_rejected(&mut self, reason: &str) {
        self.total += 1;
        self.rejected += 1;
        *self.reasons.entry(reason.to_string()).or_insert(0) += 1;
    }
}

/// Plain-text calibration report: forecast moments, bias tests, and interval
/// coverage, plus the rejection tally.
pub fn calibration_report(
    forecasts: &[DistributionForecast],
    bias: &[BiasTest],
    coverage: &CoverageStats,
    hists: &ForecastHistograms,
    rejections: &RejectionTally,
) -> String {
    let moments = |get: &dyn Fn(&DistributionForecast) -> f64| -> (f64, f64, f64, f64) {
        let vals: Vec<f64> = forecasts.iter().map(get).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), min, max)
    };
    let mut out = String::new();
    out.push_str("Calibration report\n");
    out.push_str("==================\n\n");
    out.push_str("Panel A: Forecast moments (percent units)\n");
    out.push_str(&format!(
        "{:<20}{:>10}{:>10}{:>10}{:>10}\n",
        "", "mean", "sd", "min", "max"
    ));
    for (label, get) in [
        (
            "Low (1-in-10)",
            (&|f: &DistributionForecast| f.low) as &dyn Fn(&DistributionForecast) -> f64,
        ),
        ("Expected", &|f: &DistributionForecast| f.expected),
        ("High (1-in-10)", &|f: &DistributionForecast| f.high),
    ] {
        let (mean, sd, min, max) = moments(get);
        out.push_str(&format!(
            "{label:<20}{mean:>10.2}{sd:>10.2}{min:>10.2}{max:>10.2}\n"
        ));
    }
    out.push_str(&format!(
        "Share of negative expected-return forecasts: {:.2}%\n\n",
        hists.share_expected_negative
    ));
    out.push_str("Panel B: Bias tests (paired t)\n");
    out.push_str(&format!(
        "{:<30}{:>12}{:>10}{:>10}{:>8}\n",
        "Comparison", "mean diff", "t-stat", "p-value", "n"
    ));
    for b in bias {
        out.push_str(&format!(
            "{:<30}{:>12.3}{:>10.2}{:>10.3}{:>8}\n",
            b.label, b.mean_diff, b.t_stat, b.p_value, b.n
        ));
    }
    out.push('\n');
    out.push_str("Panel C: Interval coverage (percent of realizations)\n");
    out.push_str(&format!(
        "{:<28}{:>12}{:>12}{:>12}\n",
        "", "below low", "within", "above high"
    ));
    out.push_str(&format!(
        "{:<28}{:>12.2}{:>12.2}{:>12.2}\n",
        "Forecast interval",
        coverage.pct_below(),
        coverage.pct_within(),
        coverage.pct_above()
    ));
    out.push_str(&format!(
        "{:<28}{:>12.2}{:>12.2}{:>12.2}\n",
        "Historical p10-p90",
        coverage.hist_pct_below(),
        coverage.hist_pct_within(),
        coverage.hist_pct_above()
    ));
    out.push_str(&format!("Observations: {}\n\n", coverage.n));
    out.push_str(&format!(
        "Responses: {} total, {} rejected\n",
        rejections.total, rejections.rejected
    ));
    for (reason, count) in &rejections.reasons {
        out.push_str(&format!("  rejected ({reason}): {count}\n"));
    }
    out
}

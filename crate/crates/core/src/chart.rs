//! Deterministic candlestick rendering for chart-based ranking prompts.
//!
//! Charts are emitted as plain SVG so identical inputs produce identical
//! bytes. Each chart shows one stock's daily OHLC path over the contest's lag
//! window: green bodies for up days (close > open), red for down days, gray
//! for unchanged; wicks span the high-low range. Prices are normalized so the
//! first day's open is 100, and no dates, tickers, or gridlines appear
//! anywhere — only the anonymous stock label.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::panel::{ContestPanel, DailyBar, VALID_LAGS};

/// Default canvas size in pixels.
pub const CHART_WIDTH: u32 = 640;
pub const CHART_HEIGHT: u32 = 320;

const MARGIN_LEFT: f64 = 48.0;
const MARGIN_RIGHT: f64 = 12.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 24.0;

/// File name for the chart of anonymous stock `k` (1-based) at lag depth
/// `lags`, e.g. `stock_3_12w.svg`.
pub fn chart_file_name(k: usize, lags: usize) -> String {
    format!("stock_{k}_{lags}w.svg")
}

/// Renders one stock's daily bars as an SVG candlestick chart.
///
/// `bars` must cover exactly `lags` weeks at five trading days per week, with
/// positive, internally consistent prices. The label is drawn as the title
/// and should already be anonymous (`stock 3`, not a ticker).
pub fn render_candlesticks(bars: &[DailyBar], label: &str, lags: usize) -> Result<Vec<u8>> {
    if !VALID_LAGS.contains(&lags) {
        return Err(Error::InvalidData(format!(
            "chart lag depth {} not in {:?}",
            lags, VALID_LAGS
        )));
    }
    if bars.len() != 5 * lags {
        return Err(Error::InvalidData(format!(
            "chart for {label} has {} daily bars; expected {} ({} weeks of 5 trading days)",
            bars.len(),
            5 * lags,
            lags
        )));
    }
    for bar in bars {
        bar.validate()?;
    }

    // Normalize so the first open is 100.
    let scale = 100.0 / bars[0].open;
    let lows: Vec<f64> = bars.iter().map(|b| b.low * scale).collect();
    let highs: Vec<f64> = bars.iter().map(|b| b.high * scale).collect();
    let min_p = lows.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_p = highs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = (0.05 * (max_p - min_p)).max(1e-9);
    let lo = min_p - pad;
    let hi = max_p + pad;

    let w = CHART_WIDTH as f64;
    let h = CHART_HEIGHT as f64;
    let plot_left = MARGIN_LEFT;
    let plot_right = w - MARGIN_RIGHT;
    let plot_top = MARGIN_TOP;
    let plot_bottom = h - MARGIN_BOTTOM;
    let y_of = |price: f64| plot_bottom - (price - lo) / (hi - lo) * (plot_bottom - plot_top);

    let n = bars.len() as f64;
    let slot = (plot_right - plot_left) / n;
    let body_w = slot * 0.64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_WIDTH}\" height=\"{CHART_HEIGHT}\" viewBox=\"0 0 {CHART_WIDTH} {CHART_HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{CHART_WIDTH}\" height=\"{CHART_HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{label}</text>",
        w / 2.0
    );
    // Minimal axes: a left price axis with three tick labels and a baseline.
    let _ = writeln!(
        svg,
        "<line x1=\"{plot_left}\" y1=\"{plot_top}\" x2=\"{plot_left}\" y2=\"{plot_bottom}\" stroke=\"black\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{plot_left}\" y1=\"{plot_bottom}\" x2=\"{plot_right}\" y2=\"{plot_bottom}\" stroke=\"black\" stroke-width=\"1\"/>"
    );
    for (frac, price) in [(0.0f64, hi), (0.5, (hi + lo) / 2.0), (1.0, lo)] {
        let y = plot_top + frac * (plot_bottom - plot_top);
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.1}</text>",
            plot_left - 4.0,
            y + 3.5,
            price
        );
    }
    for (i, bar) in bars.iter().enumerate() {
        let open = bar.open * scale;
        let close = bar.close * scale;
        let color = if close > open {
            "green"
        } else if close < open {
            "red"
        } else {
            "gray"
        };
        let x_center = plot_left + (i as f64 + 0.5) * slot;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{y1:.2}\" x2=\"{x:.2}\" y2=\"{y2:.2}\" stroke=\"{color}\" stroke-width=\"1\"/>",
            x = x_center,
            y1 = y_of(bar.high * scale),
            y2 = y_of(bar.low * scale),
        );
        let body_top = y_of(open.max(close));
        let body_h = (y_of(open.min(close)) - body_top).max(0.5);
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
            x_center - body_w / 2.0,
            body_top,
            body_w,
            body_h
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg.into_bytes())
}

/// Renders the ten charts of a contest under anonymous labels, returning
/// `(file_name, svg_bytes)` pairs in stock order. The panel must carry its
/// daily OHLC block.
pub fn contest_charts(panel: &ContestPanel, lags: usize) -> Result<Vec<(String, Vec<u8>)>> {
    panel.validate()?;
    let ohlc = panel.daily_ohlc.as_ref().ok_or_else(|| {
        Error::InvalidData(format!(
            "contest {} has no daily OHLC block; charts cannot be rendered",
            panel.contest_id
        ))
    })?;
    if panel.n_lags() < lags {
        return Err(Error::InvalidData(format!(
            "contest {} has only {} lag weeks; {} requested",
            panel.contest_id,
            panel.n_lags(),
            lags
        )));
    }
    let mut charts = Vec::with_capacity(ohlc.len());
    for (i, bars) in ohlc.iter().enumerate() {
        // Most recent `lags` weeks of daily bars.
        let tail = &bars[bars.len() - 5 * lags..];
        let label = format!("stock {}", i + 1);
        charts.push((
            chart_file_name(i + 1, lags),
            render_candlesticks(tail, &label, lags)?,
        ));
    }
    Ok(charts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{synth_contests, SynthConfig};

    fn ohlc_panel() -> ContestPanel {
        synth_contests(&SynthConfig {
            n_contests: 1,
            lags: 12,
            reversal_coeff: -0.2,
            noise_sd: 0.03,
            seed: 21,
            with_ohlc: true,
        })
        .unwrap()
        .remove(0)
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = ohlc_panel();
        let bars = &p.daily_ohlc.as_ref().unwrap()[0];
        let a = render_candlesticks(bars, "stock 1", 12).unwrap();
        let b = render_candlesticks(bars, "stock 1", 12).unwrap();
        assert_eq!(a, b, "same bars must render to identical bytes");
    }

    #[test]
    fn svg_contains_one_candle_per_day_and_no_dates() {
        let p = ohlc_panel();
        let bars = &p.daily_ohlc.as_ref().unwrap()[0];
        let svg = String::from_utf8(render_candlesticks(bars, "stock 1", 12).unwrap()).unwrap();
        let bodies = svg.matches("<rect x=").count();
        let wicks = svg.matches("<line x1=").count();
        assert_eq!(bodies, 60, "one body per trading day");
        // 60 wicks plus the two axis lines.
        assert_eq!(wicks, 62);
        assert!(svg.contains(">stock 1</text>"));
        assert!(!svg.contains("2020-"), "dates must never appear in charts");
        assert!(svg.contains("width=\"640\" height=\"320\""));
    }

    #[test]
    fn up_days_green_down_days_red() {
        let p = ohlc_panel();
        let bars = &p.daily_ohlc.as_ref().unwrap()[0];
        let svg = String::from_utf8(render_candlesticks(bars, "stock 1", 12).unwrap()).unwrap();
        let ups = bars.iter().filter(|b| b.close > b.open).count();
        let downs = bars.iter().filter(|b| b.close < b.open).count();
        assert_eq!(svg.matches("fill=\"green\"").count(), ups);
        assert_eq!(svg.matches("fill=\"red\"").count(), downs);
    }

    #[test]
    fn first_price_normalized_to_100() {
        let p = ohlc_panel();
        let mut bars = p.daily_ohlc.as_ref().unwrap()[0].clone();
        // Rescale all prices by 37x: the rendering must be identical because
        // the first open is normalized to 100.
        let svg_a = render_candlesticks(&bars, "stock 1", 12).unwrap();
        for b in &mut bars {
            b.open *= 37.0;
            b.high *= 37.0;
            b.low *= 37.0;
            b.close *= 37.0;
        }
        let svg_b = render_candlesticks(&bars, "stock 1", 12).unwrap();
        assert_eq!(svg_a, svg_b);
    }

    #[test]
    fn wrong_day_count_is_rejected() {
        let p = ohlc_panel();
        let bars = &p.daily_ohlc.as_ref().unwrap()[0];
        let err = render_candlesticks(&bars[..59], "stock 1", 12).unwrap_err();
        assert!(err.to_string().contains("expected 60"), "got: {err}");
    }

    #[test]
    fn non_positive_price_is_rejected() {
        let p = ohlc_panel();
        let mut bars = p.daily_ohlc.as_ref().unwrap()[0].clone();
        bars[10].low = 0.0;
        assert!(render_candlesticks(&bars, "stock 1", 12).is_err());
    }

    #[test]
    fn contest_charts_use_anonymous_names() {
        let p = ohlc_panel();
        let charts = contest_charts(&p, 12).unwrap();
        assert_eq!(charts.len(), 10);
        assert_eq!(charts[0].0, "stock_1_12w.svg");
        assert_eq!(charts[9].0, "stock_10_12w.svg");
        for (name, bytes) in &charts {
            let svg = String::from_utf8(bytes.clone()).unwrap();
            assert!(!svg.contains("T0"), "ticker leaked into {name}");
            assert!(!svg.contains("T1"), "ticker leaked into {name}");
        }
    }

    #[test]
    fn contest_without_ohlc_fails() {
        let mut p = ohlc_panel();
        p.daily_ohlc = None;
        let err = contest_charts(&p, 12).unwrap_err();
        assert!(
            err.to_string().contains("no daily OHLC block"),
            "got: {err}"
        );
    }
}

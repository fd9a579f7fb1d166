//! Analysis-side stages: estimate, calibrate, report.
//!
//! These stages never touch the network. They rebuild the run's prompt
//! bundles from the data files, look each response up in the QueryRecord
//! store by content hash, re-validate it, and hand the joined data to the
//! estimators. Rejected responses are tallied and excluded (a rejected rank
//! response drops its whole contest), so every table records how much of the
//! sample survived validation.

use std::fmt::Write as _;

use forecast_audit::calib::{
    bias_tests, calibration_report, coverage_stats, forecast_histograms, historical_stats,
    BiasTest, CoverageStats, ForecastHistograms, HistoricalDistribution, RejectionTally,
};
use forecast_audit::econ::{
    decompose_forecast, fama_macbeth, fit_decay, fm_daily_design, fm_design_names, ols_cluster,
    percentile_regression, sign_split_regress, CoefTable, DecayFit, FmResult, OlsSpec, ParenStat,
    PercentileObs, SmallSample,
};
use forecast_audit::panel::{build_lag_matrix, ContestPanel, Dependent, Regressors, ScoreMap};
use forecast_audit::prompt::{
    parse_distribution_response, parse_rank_response, parse_sentiment_response,
    DistributionForecast,
};
use forecast_audit::{Error, Result};

use crate::config::{Experiment, RunConfig};
use crate::pipeline::{
    check_snapshot, lookup_record, require_records, run_bundles, write_snapshot, write_text,
    BundleSource, RunPaths,
};

/// One rendered output table: a fixed-width text block plus a full-precision
/// CSV twin.
pub struct Section {
    pub slug: &'static str,
    pub title: String,
    pub text: String,
    pub csv: String,
}

fn table_section(slug: &'static str, title: &str, table: &CoefTable) -> Section {
    Section {
        slug,
        title: title.to_string(),
        text: table.to_text(title, ParenStat::TStat),
        csv: table.to_csv(),
    }
}

/// Validated rank responses joined back to their contests.
pub struct RankCollected {
    /// Contests whose response survived validation.
    pub kept: Vec<ContestPanel>,
    /// Forecast rank per `(contest, stock)`, 10 = best.
    pub scores: ScoreMap,
    pub tally: RejectionTally,
}

pub fn collect_rank(config: &RunConfig, paths: &RunPaths) -> Result<RankCollected> {
    let (contests, _, bundles) = run_bundles(config, paths)?;
    let mut out = RankCollected {
        kept: Vec::new(),
        scores: ScoreMap::new(),
        tally: RejectionTally::default(),
    };
    for (bundle, source) in &bundles {
        let BundleSource::Contest(i) = source else {
            return Err(Error::InvalidData(format!(
                "rank bundle {} is not tied to a contest",
                bundle.id
            )));
        };
        let record = lookup_record(config, paths, bundle)?;
        match parse_rank_response(&record.response, &bundle.anon_ids) {
            Ok(forecast) => {
                out.tally.record_ok();
                let panel = &contests[*i];
                // Anonymous id j stands for the j-th stock of the panel.
                for (j, stock) in panel.stock_ids.iter().enumerate() {
                    out.scores.insert(
                        (panel.contest_id.clone(), stock.clone()),
                        f64::from(forecast.ranking.ranks[j]),
                    );
                }
                out.kept.push(panel.clone());
            }
            Err(e) => out.tally.record_rejected(&e.to_string()),
        }
    }
    Ok(out)
}

/// One validated sentiment response with its trailing-year context.
pub struct SentimentRow {
    pub series_id: String,
    /// Returns `r_{t-1}..r_{t-12}`, most recent first, decimal.
    pub lag_returns: Vec<f64>,
    /// Direction call in `{-1, 0, 1}`.
    pub prediction: f64,
    /// Realized next-month return, decimal.
    pub next_return: f64,
}

pub struct SentimentCollected {
    pub rows: Vec<SentimentRow>,
    pub tally: RejectionTally,
}

pub fn collect_sentiment(config: &RunConfig, paths: &RunPaths) -> Result<SentimentCollected> {
    let (_, monthly, bundles) = run_bundles(config, paths)?;
    let mut out = SentimentCollected {
        rows: Vec::new(),
        tally: RejectionTally::default(),
    };
    for (bundle, source) in &bundles {
        let BundleSource::Window { series, end } = source else {
            return Err(Error::InvalidData(format!(
                "sentiment bundle {} is not tied to a monthly window",
                bundle.id
            )));
        };
        let record = lookup_record(config, paths, bundle)?;
        match parse_sentiment_response(&record.response) {
            Ok(forecast) => {
                out.tally.record_ok();
                let s = &monthly[*series];
                let lag_returns: Vec<f64> = (1..=12).map(|k| s.returns[end + 1 - k]).collect();
                out.rows.push(SentimentRow {
                    series_id: s.series_id.clone(),
                    lag_returns,
                    prediction: f64::from(forecast.prediction),
                    next_return: s.returns[end + 1],
                });
            }
            Err(e) => out.tally.record_rejected(&e.to_string()),
        }
    }
    Ok(out)
}

/// Validated distribution responses with their historical windows.
pub struct DistCollected {
    pub obs: Vec<PercentileObs>,
    pub forecasts: Vec<DistributionForecast>,
    pub historical: Vec<HistoricalDistribution>,
    /// Realized next-month return per forecast, percent.
    pub realized_pct: Vec<f64>,
    pub tally: RejectionTally,
}

pub fn collect_distribution(config: &RunConfig, paths: &RunPaths) -> Result<DistCollected> {
    let (_, monthly, bundles) = run_bundles(config, paths)?;
    let mut out = DistCollected {
        obs: Vec::new(),
        forecasts: Vec::new(),
        historical: Vec::new(),
        realized_pct: Vec::new(),
        tally: RejectionTally::default(),
    };
    for (bundle, source) in &bundles {
        let BundleSource::Window { series, end } = source else {
            return Err(Error::InvalidData(format!(
                "distribution bundle {} is not tied to a monthly window",
                bundle.id
            )));
        };
        let record = lookup_record(config, paths, bundle)?;
        match parse_distribution_response(&record.response) {
            Ok(forecast) => {
                out.tally.record_ok();
                let s = &monthly[*series];
                let window_len = config.distribution_window(s.len());
                let window = s.window(*end, window_len)?;
                let hist = historical_stats(&window.returns)?;
                out.obs.push(PercentileObs {
                    series_id: s.series_id.clone(),
                    year_month: s.months[*end].to_string(),
                    forecast,
                    hist: hist.clone(),
                });
                out.forecasts.push(forecast);
                out.historical.push(hist);
                out.realized_pct.push(s.returns[end + 1] * 100.0);
            }
            Err(e) => out.tally.record_rejected(&e.to_string()),
        }
    }
    Ok(out)
}

fn decay_text(fit: &DecayFit, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{}", "-".repeat(46));
    let _ = writeln!(
        s,
        "{:<22}{:>12.4}  ({:.4})",
        "lambda1 (scale)", fit.lambda1, fit.se_lambda1
    );
    let _ = writeln!(
        s,
        "{:<22}{:>12.4}  ({:.4})",
        "lambda2 (decay)", fit.lambda2, fit.se_lambda2
    );
    let _ = writeln!(
        s,
        "{:<22}{:>12.4}  ({:.4})",
        "degree lam1*(1-lam2)", fit.degree, fit.se_degree
    );
    let _ = writeln!(s, "{}", "-".repeat(46));
    let weights: Vec<String> = fit.weights.iter().map(|w| format!("{w:.4}")).collect();
    let _ = writeln!(s, "Weights, newest lag first: {}", weights.join(" "));
    let _ = writeln!(
        s,
        "Observations: {}  Clusters: {}  SSR: {:.6}",
        fit.n_obs, fit.n_clusters, fit.objective
    );
    let _ = writeln!(
        s,
        "Converged: {}  Decay at boundary: {}",
        fit.converged, fit.lambda2_at_boundary
    );
    s
}

fn decay_csv(fit: &DecayFit) -> String {
    let mut s = String::from("param,estimate,se\n");
    let _ = writeln!(s, "lambda1,{},{}", fit.lambda1, fit.se_lambda1);
    let _ = writeln!(s, "lambda2,{},{}", fit.lambda2, fit.se_lambda2);
    let _ = writeln!(s, "degree,{},{}", fit.degree, fit.se_degree);
    for (i, w) in fit.weights.iter().enumerate() {
        let _ = writeln!(s, "w{i},{w},");
    }
    s
}

fn fm_csv(fm: &FmResult) -> String {
    let mut s = String::from("name,mean,se,t\n");
    for (i, name) in fm.names.iter().enumerate() {
        let _ = writeln!(s, "{name},{},{},{}", fm.mean[i], fm.se[i], fm.t[i]);
    }
    s
}

/// Tables for a rank experiment, honoring the analysis toggles.
pub fn rank_sections(config: &RunConfig, collected: &RankCollected) -> Result<Vec<Section>> {
    if collected.kept.is_empty() {
        return Err(Error::Estimation(
            "every rank response was rejected; nothing to estimate".into(),
        ));
    }
    let panels = &collected.kept;
    let lags = config.lags;
    let toggles = &config.analysis;
    let score = Dependent::Score {
        label: "Forecast score",
        values: &collected.scores,
    };
    let mut sections = Vec::new();
    if toggles.eq1 {
        let lm = build_lag_matrix(panels, score.clone(), Regressors::Returns, lags)?;
        sections.push(table_section(
            "eq1_score",
            "Forecast score on lagged weekly returns",
            &ols_cluster(&OlsSpec::from_lag_matrix(&lm))?,
        ));
        let lm = build_lag_matrix(panels, Dependent::RealizedReturn, Regressors::Returns, lags)?;
        sections.push(table_section(
            "eq1_realized",
            "Realized return on lagged weekly returns",
            &ols_cluster(&OlsSpec::from_lag_matrix(&lm))?,
        ));
        let lm = build_lag_matrix(panels, score.clone(), Regressors::AdjustedReturns, lags)?;
        sections.push(table_section(
            "eq1_adjusted",
            "Forecast score on demeaned lagged returns",
            &ols_cluster(&OlsSpec::from_lag_matrix(&lm))?,
        ));
    }
    if toggles.eq2 {
        let lm = build_lag_matrix(panels, score.clone(), Regressors::SignedReturns, lags)?;
        sections.push(table_section(
            "eq2_signed",
            "Forecast score on signed lagged returns",
            &sign_split_regress(&lm)?,
        ));
    }
    if toggles.eq3 {
        let lm = build_lag_matrix(panels, score.clone(), Regressors::Returns, lags)?;
        let fit = fit_decay(&lm)?;
        let title = "Exponential-decay fit of the forecast score";
        sections.push(Section {
            slug: "eq3_decay",
            title: title.to_string(),
            text: decay_text(&fit, title),
            csv: decay_csv(&fit),
        });
    }
    if toggles.ranks {
        let lm = build_lag_matrix(panels, score.clone(), Regressors::Ranks, lags)?;
        sections.push(table_section(
            "ranks_score",
            "Forecast score on lagged return ranks",
            &ols_cluster(&OlsSpec::from_lag_matrix(&lm))?,
        ));
    }
    if toggles.fm {
        let lm = build_lag_matrix(panels, score.clone(), Regressors::Returns, lags)?;
        let decomposition = decompose_forecast(&lm)?;
        let inputs = fm_daily_design(panels, &decomposition)?;
        let names = fm_design_names();
        let fm = fama_macbeth("Daily return", &names, &inputs)?;
        let title = "Daily returns on decomposed forecast scores";
        sections.push(Section {
            slug: "fm_decomposed",
            title: title.to_string(),
            text: fm.to_text(title),
            csv: fm_csv(&fm),
        });
    }
    Ok(sections)
}

/// Tables for the sentiment experiment.
pub fn sentiment_sections(
    config: &RunConfig,
    collected: &SentimentCollected,
) -> Result<Vec<Section>> {
    if collected.rows.is_empty() {
        return Err(Error::Estimation(
            "every sentiment response was rejected; nothing to estimate".into(),
        ));
    }
    let rows = &collected.rows;
    let mut sections = Vec::new();
    if config.analysis.eq4 {
        let mut names = vec!["Intercept".to_string()];
        names.extend((1..=12).map(|s| format!("Return t-{s}")));
        let y: Vec<f64> = rows.iter().map(|r| r.prediction).collect();
        let x: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut v = Vec::with_capacity(13);
                v.push(1.0);
                v.extend_from_slice(&r.lag_returns);
                v
            })
            .collect();
        let cluster: Vec<String> = rows.iter().map(|r| r.series_id.clone()).collect();
        let spec = OlsSpec {
            y_name: "Sentiment",
            x_names: &names,
            y: &y,
            x: &x,
            cluster: &cluster,
            fixed_effects: None,
            small_sample: SmallSample::Cr1,
            drop_zero_columns: false,
        };
        sections.push(table_section(
            "eq4_sentiment",
            "Sentiment on trailing monthly returns",
            &ols_cluster(&spec)?,
        ));
        let names = vec!["Intercept".to_string(), "Sentiment".to_string()];
        let y: Vec<f64> = rows.iter().map(|r| r.next_return).collect();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![1.0, r.prediction]).collect();
        let spec = OlsSpec {
            y_name: "Next-month return",
            x_names: &names,
            y: &y,
            x: &x,
            cluster: &cluster,
            fixed_effects: None,
            small_sample: SmallSample::Cr1,
            drop_zero_columns: false,
        };
        sections.push(table_section(
            "eq4_future",
            "Next-month return on sentiment",
            &ols_cluster(&spec)?,
        ));
    }
    Ok(sections)
}

/// Tables for the distribution experiment.
pub fn distribution_sections(
    config: &RunConfig,
    collected: &DistCollected,
) -> Result<Vec<Section>> {
    if collected.obs.is_empty() {
        return Err(Error::Estimation(
            "every distribution response was rejected; nothing to estimate".into(),
        ));
    }
    let mut sections = Vec::new();
    if config.analysis.eq5 {
        let [low, expected, high] = percentile_regression(&collected.obs)?;
        sections.push(table_section(
            "eq5_low",
            "Low forecast on historical statistics",
            &low,
        ));
        sections.push(table_section(
            "eq5_expected",
            "Expected forecast on historical statistics",
            &expected,
        ));
        sections.push(table_section(
            "eq5_high",
            "High forecast on historical statistics",
            &high,
        ));
    }
    Ok(sections)
}

/// All estimation tables for the run plus the response tally.
pub fn estimate_outputs(
    config: &RunConfig,
    paths: &RunPaths,
) -> Result<(Vec<Section>, RejectionTally)> {
    match config.experiment {
        Experiment::RankContest | Experiment::ChartRank => {
            let collected = collect_rank(config, paths)?;
            Ok((rank_sections(config, &collected)?, collected.tally))
        }
        Experiment::Sentiment => {
            let collected = collect_sentiment(config, paths)?;
            Ok((sentiment_sections(config, &collected)?, collected.tally))
        }
        Experiment::Distribution => {
            let collected = collect_distribution(config, paths)?;
            Ok((distribution_sections(config, &collected)?, collected.tally))
        }
    }
}

/// Plain-text summary of how many responses survived validation.
pub fn tally_text(tally: &RejectionTally) -> String {
    let mut s = format!(
        "Responses: {} total, {} rejected\n",
        tally.total, tally.rejected
    );
    for (reason, count) in &tally.reasons {
        let _ = writeln!(s, "  {count} x {reason}");
    }
    s
}

/// Writes `tables/<slug>.txt` and `tables/<slug>.csv` for every enabled
/// estimator, plus the rejection tally.
pub fn cmd_estimate(config: &RunConfig) -> Result<()> {
    let paths = RunPaths::new(&config.out_dir);
    check_snapshot(config, &paths)?;
    require_records(config, &paths)?;
    let (sections, tally) = estimate_outputs(config, &paths)?;
    let dir = paths.tables_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for section in &sections {
        write_text(&dir.join(format!("{}.txt", section.slug)), &section.text)?;
        write_text(&dir.join(format!("{}.csv", section.slug)), &section.csv)?;
    }
    write_text(&dir.join("rejections.txt"), &tally_text(&tally))?;
    write_snapshot(config, &paths)?;
    println!("estimate: {} tables -> {}", sections.len(), dir.display());
    Ok(())
}

/// Everything the calibrate stage writes, recomputed from stored records.
pub struct CalibOutputs {
    pub text: String,
    pub bias: Vec<BiasTest>,
    pub coverage: CoverageStats,
    pub hists: ForecastHistograms,
}

pub fn calibration_outputs(config: &RunConfig, paths: &RunPaths) -> Result<CalibOutputs> {
    if config.experiment != Experiment::Distribution {
        return Err(Error::InvalidConfig(format!(
            "calibrate applies to the distribution experiment; this run is `{}`",
            config.experiment.as_str()
        )));
    }
    if !config.analysis.calibration {
        return Err(Error::InvalidConfig(
            "calibration is disabled in [analysis]".into(),
        ));
    }
    let collected = collect_distribution(config, paths)?;
    if collected.forecasts.is_empty() {
        return Err(Error::Estimation(
            "every distribution response was rejected; nothing to calibrate".into(),
        ));
    }
    let bias = bias_tests(
        &collected.forecasts,
        &collected.historical,
        &collected.realized_pct,
    )?;
    let coverage = coverage_stats(
        &collected.forecasts,
        &collected.historical,
        &collected.realized_pct,
    )?;
    let hists = forecast_histograms(&collected.forecasts, &collected.historical, 0.5)?;
    let text = calibration_report(
        &collected.forecasts,
        &bias,
        &coverage,
        &hists,
        &collected.tally,
    );
    Ok(CalibOutputs {
        text,
        bias,
        coverage,
        hists,
    })
}

fn bias_csv(bias: &[BiasTest]) -> String {
    let mut s = String::from("label,mean_diff,t_stat,p_value,n\n");
    for b in bias {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            b.label, b.mean_diff, b.t_stat, b.p_value, b.n
        );
    }
    s
}

fn coverage_csv(c: &CoverageStats) -> String {
    let n = c.n as f64;
    let mut s = String::from("measure,below,within,above,n\n");
    let _ = writeln!(
        s,
        "forecast_count,{},{},{},{}",
        c.below, c.within, c.above, c.n
    );
    let _ = writeln!(
        s,
        "forecast_pct,{},{},{},",
        c.pct_below(),
        c.pct_within(),
        c.pct_above()
    );
    let _ = writeln!(
        s,
        "historical_count,{},{},{},{}",
        c.hist_below, c.hist_within, c.hist_above, c.n
    );
    let _ = writeln!(
        s,
        "historical_pct,{},{},{},",
        c.hist_below as f64 * 100.0 / n,
        c.hist_within as f64 * 100.0 / n,
        c.hist_above as f64 * 100.0 / n
    );
    s
}

/// Writes the calibration report, CSVs, and histogram SVGs under
/// `calibration/`.
pub fn cmd_calibrate(config: &RunConfig) -> Result<()> {
    let paths = RunPaths::new(&config.out_dir);
    check_snapshot(config, &paths)?;
    require_records(config, &paths)?;
    let outputs = calibration_outputs(config, &paths)?;
    let dir = paths.calib_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_text(&dir.join("report.txt"), &outputs.text)?;
    write_text(&dir.join("bias.csv"), &bias_csv(&outputs.bias))?;
    write_text(&dir.join("coverage.csv"), &coverage_csv(&outputs.coverage))?;
    let hists = [
        (
            "low_minus_p10",
            &outputs.hists.low_minus_p10,
            "Low forecast minus historical p10",
        ),
        (
            "expected_minus_mean",
            &outputs.hists.expected_minus_mean,
            "Expected forecast minus historical mean",
        ),
        (
            "high_minus_p90",
            &outputs.hists.high_minus_p90,
            "High forecast minus historical p90",
        ),
        ("expected", &outputs.hists.expected, "Expected forecast"),
    ];
    for (name, hist, title) in hists {
        let svg = hist.to_svg(title);
        let path = dir.join(format!("hist_{name}.svg"));
        std::fs::write(&path, &svg).map_err(|e| Error::io(path.display().to_string(), e))?;
        write_text(&dir.join(format!("hist_{name}.csv")), &hist.to_csv())?;
    }
    write_snapshot(config, &paths)?;
    println!("calibrate: report + 4 histograms -> {}", dir.display());
    Ok(())
}

/// Assembles `report.md` from the stored records: configuration snapshot,
/// response tally, every enabled table, and (for distribution runs) the
/// calibration report.
pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let paths = RunPaths::new(&config.out_dir);
    check_snapshot(config, &paths)?;
    require_records(config, &paths)?;
    let (sections, tally) = estimate_outputs(config, &paths)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Forecast audit report");
    let _ = writeln!(md);
    let _ = writeln!(md, "## Run configuration");
    let _ = writeln!(md);
    let _ = writeln!(md, "```toml");
    md.push_str(&config.to_toml());
    let _ = writeln!(md, "```");
    let _ = writeln!(md);
    let _ = writeln!(md, "## Responses");
    let _ = writeln!(md);
    let _ = writeln!(md, "```text");
    md.push_str(&tally_text(&tally));
    let _ = writeln!(md, "```");
    for section in &sections {
        let _ = writeln!(md);
        let _ = writeln!(md, "## {}", section.title);
        let _ = writeln!(md);
        let _ = writeln!(md, "```text");
        md.push_str(&section.text);
        if !section.text.ends_with('\n') {
            md.push('\n');
        }
        let _ = writeln!(md, "```");
    }
    if config.experiment == Experiment::Distribution && config.analysis.calibration {
        let outputs = calibration_outputs(config, &paths)?;
        let _ = writeln!(md);
        let _ = writeln!(md, "## Calibration");
        let _ = writeln!(md);
        let _ = writeln!(md, "```text");
        md.push_str(&outputs.text);
        if !outputs.text.ends_with('\n') {
            md.push('\n');
        }
        let _ = writeln!(md, "```");
        let _ = writeln!(md);
        let _ = writeln!(
            md,
            "Histogram renderings live under `calibration/` after `forecast-audit calibrate`."
        );
    }
    write_text(&paths.report_md(), &md)?;
    write_snapshot(config, &paths)?;
    println!("report: {}", paths.report_md().display());
    Ok(())
}

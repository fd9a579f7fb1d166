//! Artifact layout and the data-side pipeline stages (simulate, prompts,
//! query).
//!
//! Every stage is idempotent: outputs are pure functions of the data files
//! and the resolved configuration, so re-running a stage rewrites identical
//! bytes. A snapshot of the resolved configuration lives in the output
//! directory; downstream stages compare fingerprints against it and refuse to
//! mix artifacts produced under a different configuration.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use forecast_audit::chart::contest_charts;
use forecast_audit::forecaster::{
    attachment_manifest, cache_lookup, cache_store, extrapolator_rank, prompt_hash, query_many,
    reversal_rank, trial_parse, Backend, QueryRecord,
};
use forecast_audit::panel::{
    load_contest_panel, load_monthly_series, load_ohlc, synth_contests, synth_monthly,
    write_contest_panel, write_monthly_series, write_ohlc, ContestPanel, MonthlySeries,
    MonthlySynthConfig, RankVector, SynthConfig,
};
use forecast_audit::prompt::{
    build_chart_prompt, build_distribution_prompt, build_rank_prompt, build_sentiment_prompt,
    render_chart_rank_response, PromptBundle, RankForecast,
};
use forecast_audit::{Error, Result};

use crate::config::{DataSource, Experiment, RunConfig};

/// Paths of every artifact under one output directory.
pub struct RunPaths {
    pub out: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> RunPaths {
        RunPaths {
            out: out.to_path_buf(),
        }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.out.join("config.toml")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn contests_csv(&self) -> PathBuf {
        self.data_dir().join("contests.csv")
    }

    pub fn ohlc_csv(&self) -> PathBuf {
        self.data_dir().join("ohlc.csv")
    }

    pub fn monthly_dir(&self) -> PathBuf {
        self.data_dir().join("monthly")
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.out.join("prompts")
    }

    pub fn prompt_index(&self) -> PathBuf {
        self.prompts_dir().join("index.txt")
    }

    pub fn records_dir(&self) -> PathBuf {
        self.out.join("records")
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.out.join("tables")
    }

    pub fn calib_dir(&self) -> PathBuf {
        self.out.join("calibration")
    }

    pub fn report_md(&self) -> PathBuf {
        self.out.join("report.md")
    }
}

fn sha_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

/// Identity of everything the data files depend on. Prompt bundles are a
/// pure function of the same inputs, so this also addresses the prompt stage.
pub fn fingerprint_data(config: &RunConfig) -> String {
    let data = toml::to_string(&config.data).expect("data config serializes");
    sha_hex(&format!(
        "experiment={}\nseed={}\nlags={}\n{data}",
        config.experiment.as_str(),
        config.seed,
        config.lags
    ))
}

/// Identity of everything a stored response depends on beyond the data:
/// backend and agent parameters. Retry and parallelism settings are excluded
/// because they cannot change any response byte.
pub fn fingerprint_query(config: &RunConfig) -> String {
    let f = &config.forecaster;
    let http = match &f.http {
        Some(h) => toml::to_string(h).expect("http config serializes"),
        None => String::new(),
    };
    sha_hex(&format!(
        "backend={}\nlambda1={}\nlambda2={}\nnoise_sd={}\n{http}",
        f.backend.id(),
        f.lambda1,
        f.lambda2,
        f.noise_sd
    ))
}

/// Joint identity of a record store: the responses depend on both the data
/// and the forecaster parameters.
pub fn records_fingerprint(config: &RunConfig) -> String {
    format!(
        "{}\n{}\n",
        fingerprint_data(config),
        fingerprint_query(config)
    )
}

/// Verifies that the output directory's data was produced under a
/// configuration whose data identity matches the current one.
pub fn check_snapshot(config: &RunConfig, paths: &RunPaths) -> Result<()> {
    let path = paths.config_snapshot();
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::InvalidData(format!(
                "no run-configuration snapshot at {}; run `forecast-audit simulate` first",
                path.display()
            )));
        }
        Err(e) => return Err(Error::io(path.display().to_string(), e)),
    };
    let snapshot: RunConfig = toml::from_str(&text).map_err(|e| {
        Error::InvalidData(format!("snapshot {} does not parse: {e}", path.display()))
    })?;
    if fingerprint_data(&snapshot) != fingerprint_data(config) {
        return Err(Error::InvalidData(format!(
            "data under {} was produced by a different configuration; \
             re-run `forecast-audit simulate`",
            paths.out.display()
        )));
    }
    Ok(())
}

/// Gate for the analysis stages: the record store must exist and, when it
/// carries a fingerprint, must have been filled under the current data and
/// forecaster configuration.
pub fn require_records(config: &RunConfig, paths: &RunPaths) -> Result<()> {
    let dir = paths.records_dir();
    if !dir.is_dir() {
        return Err(Error::InvalidData(format!(
            "no QueryRecord store at {}; run `forecast-audit query` first",
            dir.display()
        )));
    }
    match std::fs::read_to_string(dir.join(".fingerprint")) {
        Ok(s) if s != records_fingerprint(config) => Err(Error::InvalidData(format!(
            "QueryRecords at {} were produced under a different configuration; \
             re-run `forecast-audit query`",
            dir.display()
        ))),
        // A store without a fingerprint (hand-assembled) is taken at face
        // value; individual lookups still verify every content hash.
        _ => Ok(()),
    }
}

pub fn write_snapshot(config: &RunConfig, paths: &RunPaths) -> Result<()> {
    std::fs::create_dir_all(&paths.out)
        .map_err(|e| Error::io(paths.out.display().to_string(), e))?;
    let path = paths.config_snapshot();
    std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// Generates (or normalizes) the input data into `data/`.
pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let paths = RunPaths::new(&config.out_dir);
    std::fs::create_dir_all(paths.data_dir())
        .map_err(|e| Error::io(paths.data_dir().display().to_string(), e))?;
    if config.experiment.uses_contests() {
        let panels = match config.data.source {
            DataSource::Synth => synth_contests(&SynthConfig {
                n_contests: config.data.n_contests,
                lags: config.lags,
                reversal_coeff: config.data.reversal_coeff,
                noise_sd: config.data.noise_sd,
                seed: config.seed,
                with_ohlc: config.experiment == Experiment::ChartRank,
            })?,
            DataSource::Files => {
                let src = config.data.contest_csv.as_ref().expect("validated");
                let mut panels = load_contest_panel(src)?;
                if config.experiment == Experiment::ChartRank {
                    let ohlc = config.data.ohlc_csv.as_ref().expect("validated");
                    load_ohlc(ohlc, &mut panels)?;
                }
                panels
            }
        };
        write_contest_panel(&paths.contests_csv(), &panels)?;
        if config.experiment == Experiment::ChartRank {
            write_ohlc(&paths.ohlc_csv(), &panels)?;
        }
        println!(
            "simulate: {} contests ({} lag weeks) -> {}",
            panels.len(),
            config.lags,
            paths.contests_csv().display()
        );
    } else {
        let series = match config.data.source {
            DataSource::Synth => synth_monthly(&MonthlySynthConfig {
                n_series: config.data.n_series,
                n_months: config.data.n_months,
                mean: config.data.monthly_mean,
                sd: config.data.monthly_sd,
                seed: config.seed,
                stagger_months: config.data.stagger_months,
            })?,
            DataSource::Files => {
                let dir = config.data.monthly_dir.as_ref().expect("validated");
                load_monthly_dir(dir)?
            }
        };
        let dir = paths.monthly_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for s in &series {
            write_monthly_series(&dir.join(format!("{}.csv", s.series_id)), s)?;
        }
        println!(
            "simulate: {} monthly series -> {}",
            series.len(),
            dir.display()
        );
    }
    write_snapshot(config, &paths)
}

fn load_monthly_dir(dir: &Path) -> Result<Vec<MonthlySeries>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidData(format!(
            "no monthly series (*.csv) found under {}",
            dir.display()
        )));
    }
    files.iter().map(|p| load_monthly_series(p)).collect()
}

/// Loads the normalized contest panels, failing with a stage hint when the
/// simulate stage has not produced them yet.
pub fn load_contests_data(config: &RunConfig, paths: &RunPaths) -> Result<Vec<ContestPanel>> {
    let path = paths.contests_csv();
    if !path.exists() {
        return Err(Error::InvalidData(format!(
            "no contest data at {}; run `forecast-audit simulate` first",
            path.display()
        )));
    }
    let mut panels = load_contest_panel(&path)?;
    if config.experiment == Experiment::ChartRank {
        let ohlc = paths.ohlc_csv();
        if !ohlc.exists() {
            return Err(Error::InvalidData(format!(
                "no daily price data at {}; run `forecast-audit simulate` first",
                ohlc.display()
            )));
        }
        load_ohlc(&ohlc, &mut panels)?;
    }
    Ok(panels)
}

/// Loads the normalized monthly series, sorted by series id.
pub fn load_monthly_data(paths: &RunPaths) -> Result<Vec<MonthlySeries>> {
    let dir = paths.monthly_dir();
    if !dir.exists() {
        return Err(Error::InvalidData(format!(
            "no monthly data under {}; run `forecast-audit simulate` first",
            dir.display()
        )));
    }
    load_monthly_dir(&dir)
}

/// Where a bundle's inputs came from, for joining responses back to data.
#[derive(Debug, Clone, Copy)]
pub enum BundleSource {
    /// Index into the loaded contest panels.
    Contest(usize),
    /// Monthly window: series index and inclusive end index.
    Window { series: usize, end: usize },
}

/// Window end indices for one monthly series: every `stride`-th month from
/// the first full window to the last month that still has a realized
/// successor.
fn window_ends(series_len: usize, window_len: usize, stride: usize) -> Vec<usize> {
    if series_len < window_len + 1 {
        return Vec::new();
    }
    (window_len - 1..=series_len - 2).step_by(stride).collect()
}

/// Builds every prompt bundle of the run, in deterministic order, along with
/// the data reference each came from.
pub fn build_bundles(
    config: &RunConfig,
    contests: &[ContestPanel],
    monthly: &[MonthlySeries],
) -> Result<Vec<(PromptBundle, BundleSource)>> {
    let mut out = Vec::new();
    match config.experiment {
        Experiment::RankContest => {
            for (i, p) in contests.iter().enumerate() {
                out.push((build_rank_prompt(p, config.lags)?, BundleSource::Contest(i)));
            }
        }
        Experiment::ChartRank => {
            for (i, p) in contests.iter().enumerate() {
                let charts = contest_charts(p, config.lags)?;
                out.push((
                    build_chart_prompt(p, config.lags, charts)?,
                    BundleSource::Contest(i),
                ));
            }
        }
        Experiment::Sentiment => {
            for (si, s) in monthly.iter().enumerate() {
                let ends = window_ends(s.len(), 12, config.data.window_stride);
                if ends.is_empty() {
                    return Err(Error::InvalidData(format!(
                        "series {} has {} months; sentiment needs at least 13",
                        s.series_id,
                        s.len()
                    )));
                }
                for end in ends {
                    let window = s.window(end, 12)?;
                    out.push((
                        build_sentiment_prompt(&window)?,
                        BundleSource::Window { series: si, end },
                    ));
                }
            }
        }
        Experiment::Distribution => {
            for (si, s) in monthly.iter().enumerate() {
                let window_len = config.distribution_window(s.len());
                let ends = window_ends(s.len(), window_len.max(60), config.data.window_stride);
                if window_len < 60 || ends.is_empty() {
                    return Err(Error::InvalidData(format!(
                        "series {} has {} months; distribution needs at least 61",
                        s.series_id,
                        s.len()
                    )));
                }
                for end in ends {
                    let window = s.window(end, window_len)?;
                    out.push((
                        build_distribution_prompt(&window)?,
                        BundleSource::Window { series: si, end },
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// The loaded inputs of a run plus the full prompt set they generate.
pub type RunInputs = (
    Vec<ContestPanel>,
    Vec<MonthlySeries>,
    Vec<(PromptBundle, BundleSource)>,
);

/// Convenience: bundles for the current run, loading whichever data the
/// experiment needs.
pub fn run_bundles(config: &RunConfig, paths: &RunPaths) -> Result<RunInputs> {
    let (contests, monthly) = if config.experiment.uses_contests() {
        (load_contests_data(config, paths)?, Vec::new())
    } else {
        (Vec::new(), load_monthly_data(paths)?)
    };
    let bundles = build_bundles(config, &contests, &monthly)?;
    Ok((contests, monthly, bundles))
}

/// Writes one JSON file per prompt bundle plus a sorted index.
pub fn cmd_prompts(config: &RunConfig) -> Result<()> {
    let paths = RunPaths::new(&config.out_dir);
    check_snapshot(config, &paths)?;
    let (_, _, bundles) = run_bundles(config, &paths)?;
    let dir = paths.prompts_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut index = String::new();
    for (bundle, _) in &bundles {
        let body = serde_json::to_vec_pretty(bundle).expect("bundles always serialize");
        write_bytes(&dir.join(format!("{}.json", bundle.id)), &body)?;
        index.push_str(&bundle.id);
        index.push('\n');
    }
    write_text(&paths.prompt_index(), &index)?;
    write_text(&dir.join(".fingerprint"), &fingerprint_data(config))?;
    write_snapshot(config, &paths)?;
    println!("prompts: {} bundles -> {}", bundles.len(), dir.display());
    Ok(())
}

/// Per-bundle seed for panel-level chart answers, split from the run seed by
/// the prompt hash so each contest gets an independent stream.
fn chart_seed(run_seed: u64, hash: &str) -> u64 {
    let prefix = u64::from_str_radix(&hash[..16], 16).expect("hash is hex");
    run_seed ^ prefix
}

/// Answers chart bundles with the panel-level numeric agents. Chart prompts
/// carry no return grid, so the extrapolator and reversal agents read the
/// panel itself; responses use the flat chart-answer form under the bundle's
/// anonymous ids.
fn synthesize_chart_record(
    config: &RunConfig,
    bundle: &PromptBundle,
    panel: &ContestPanel,
    records_dir: &Path,
) -> Result<QueryRecord> {
    let backend = config.forecaster.backend;
    let hash = prompt_hash(backend.id(), bundle);
    if let Some(record) = cache_lookup(records_dir, &hash)? {
        return Ok(record);
    }
    let f = &config.forecaster;
    let panel_forecast = match backend {
        Backend::Extrapolator => extrapolator_rank(
            panel,
            f.lambda1,
            f.lambda2,
            f.noise_sd,
            chart_seed(config.seed, &hash),
        )?,
        Backend::Reversal => reversal_rank(panel)?,
        other => {
            return Err(Error::UnsupportedSchema {
                backend: other.id().to_string(),
                schema: "rank (image attachments)".to_string(),
            });
        }
    };
    // The panel ranking is aligned with stock order; restate it under the
    // anonymous ids the prompt used.
    let anon = RankForecast {
        ranking: RankVector::new(
            bundle.anon_ids.clone(),
            panel_forecast.ranking.ranks.clone(),
        )?,
        confidence: panel_forecast.confidence,
    };
    let response = render_chart_rank_response(&anon);
    let record = QueryRecord {
        prompt_hash: hash,
        backend_id: backend.id().to_string(),
        bundle_id: bundle.id.clone(),
        schema: bundle.schema.as_str().to_string(),
        request: attachment_manifest(bundle),
        parse_outcome: trial_parse(bundle, &response),
        response,
        timestamp: None,
    };
    cache_store(records_dir, &record)?;
    Ok(record)
}

/// Answers every bundle, writing QueryRecords into `records/`. Cached
/// records are reused, so interrupted runs resume where they stopped.
pub fn cmd_query(config: &RunConfig) -> Result<()> {
    let paths = RunPaths::new(&config.out_dir);
    check_snapshot(config, &paths)?;
    match std::fs::read_to_string(paths.prompts_dir().join(".fingerprint")) {
        Ok(s) if s == fingerprint_data(config) => {}
        Ok(_) => {
            return Err(Error::InvalidData(format!(
                "prompt bundles under {} were produced by a different configuration; \
                 re-run `forecast-audit prompts`",
                paths.prompts_dir().display()
            )));
        }
        Err(_) => {
            return Err(Error::InvalidData(format!(
                "no prompt bundles under {}; run `forecast-audit prompts` first",
                paths.prompts_dir().display()
            )));
        }
    }
    let (contests, _, bundles) = run_bundles(config, &paths)?;
    let records_dir = paths.records_dir();
    let fingerprint = records_fingerprint(config);
    match std::fs::read_to_string(records_dir.join(".fingerprint")) {
        Ok(s) if s != fingerprint => {
            // The forecaster or data changed; stored responses no longer
            // correspond to this configuration, so discard and re-query.
            std::fs::remove_dir_all(&records_dir)
                .map_err(|e| Error::io(records_dir.display().to_string(), e))?;
            println!("query: configuration changed; discarding stale records");
        }
        _ => {}
    }
    std::fs::create_dir_all(&records_dir)
        .map_err(|e| Error::io(records_dir.display().to_string(), e))?;
    write_text(&records_dir.join(".fingerprint"), &fingerprint)?;
    let n = bundles.len();
    let chart_numeric = config.experiment == Experiment::ChartRank
        && matches!(
            config.forecaster.backend,
            Backend::Extrapolator | Backend::Reversal
        );
    if chart_numeric {
        for (bundle, source) in &bundles {
            let BundleSource::Contest(i) = source else {
                return Err(Error::InvalidData(format!(
                    "chart bundle {} is not tied to a contest",
                    bundle.id
                )));
            };
            synthesize_chart_record(config, bundle, &contests[*i], &records_dir)?;
        }
    } else {
        let fc = config.forecaster_config(Some(records_dir.clone()));
        let only_bundles: Vec<PromptBundle> = bundles.into_iter().map(|(b, _)| b).collect();
        query_many(&fc, &only_bundles)?;
    }
    write_snapshot(config, &paths)?;
    println!("query: {} records -> {}", n, records_dir.display());
    Ok(())
}

/// Fetches the stored record for a bundle, naming the store and hash when it
/// is absent.
pub fn lookup_record(
    config: &RunConfig,
    paths: &RunPaths,
    bundle: &PromptBundle,
) -> Result<QueryRecord> {
    let store = paths.records_dir();
    if !store.is_dir() {
        return Err(Error::InvalidData(format!(
            "no QueryRecord store at {}; run `forecast-audit query` first",
            store.display()
        )));
    }
    let hash = prompt_hash(config.forecaster.backend.id(), bundle);
    cache_lookup(&store, &hash)?.ok_or_else(|| {
        Error::InvalidData(format!(
            "QueryRecord {hash} for bundle {} missing from {}; run `forecast-audit query` first",
            bundle.id,
            store.display()
        ))
    })
}

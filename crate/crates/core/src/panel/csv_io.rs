//! CSV persistence for contest panels, monthly series, and OHLC sidecars.
//!
//! Formats (headers are mandatory and validated byte-for-byte):
//!
//! * contests: `contest_id,stock_id,w1,...,wL,realized_next`, ten consecutive
//!   rows per contest, `L` of 12 or 24 inferred from the header;
//! * monthly series: `month,return` with ISO `YYYY-MM` months, one series per
//!   file, the series id taken from the file stem;
//! * OHLC sidecar: `contest_id,stock_id,date,open,high,low,close` with ISO
//!   dates, five rows per contest week.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `load(write(panels)) == panels` field-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::panel::{ContestPanel, DailyBar, Month, MonthlySeries, STOCKS_PER_CONTEST, VALID_LAGS};

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::parse(
            path_str(path),
            line,
            format!("non-numeric {what}: `{field}`"),
        )
    })
}

/// Writes contests (without any OHLC block) to `path`.
pub fn write_contest_panel(path: &Path, panels: &[ContestPanel]) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::InvalidData(
            "refusing to write an empty contest file".into(),
        ));
    }
    let lags = panels[0].n_lags();
    for p in panels {
        p.validate()?;
        if p.n_lags() != lags {
            return Err(Error::InvalidData(format!(
                "contest {} has {} lags but the file is being written with {}",
                p.contest_id,
                p.n_lags(),
                lags
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path_str(path), e);
    write!(w, "contest_id,stock_id").map_err(io_err)?;
    for i in 1..=lags {
        write!(w, ",w{i}").map_err(io_err)?;
    }
    writeln!(w, ",realized_next").map_err(io_err)?;
    for p in panels {
        for (i, sid) in p.stock_ids.iter().enumerate() {
            write!(w, "{},{}", p.contest_id, sid).map_err(io_err)?;
            for r in &p.returns[i] {
                write!(w, ",{r}").map_err(io_err)?;
            }
            writeln!(w, ",{}", p.realized_next[i]).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Loads contests from `path`, validating structure as it goes. Incomplete
/// contests (anything other than ten consecutive rows per id) are rejected.
pub fn load_contest_panel(path: &Path) -> Result<Vec<ContestPanel>> {
    let mut reader = open_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| Error::parse(path_str(path), 1, e.to_string()))?,
        None => {
            return Err(Error::parse(
                path_str(path),
                1,
                "empty file; expected header",
            ))
        }
    };
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4
        || fields[0] != "contest_id"
        || fields[1] != "stock_id"
        || fields[fields.len() - 1] != "realized_next"
    {
        return Err(Error::parse(
            path_str(path),
            1,
            "header must be contest_id,stock_id,w1,...,wL,realized_next",
        ));
    }
    let lags = fields.len() - 3;
    for (i, name) in fields[2..2 + lags].iter().enumerate() {
        if *name != format!("w{}", i + 1) {
            return Err(Error::parse(
                path_str(path),
                1,
                format!(
                    "lag column {} named `{}`; expected `w{}`",
                    i + 3,
                    name,
                    i + 1
                ),
            ));
        }
    }
    if !VALID_LAGS.contains(&lags) {
        return Err(Error::parse(
            path_str(path),
            1,
            format!("{} lag columns; expected one of {:?}", lags, VALID_LAGS),
        ));
    }

    let mut panels: Vec<ContestPanel> = Vec::new();
    let mut seen_ids: BTreeMap<String, ()> = BTreeMap::new();
    let mut current: Option<(ContestPanel, u64)> = None;

    let finish = |panel: ContestPanel, line: u64, panels: &mut Vec<ContestPanel>| -> Result<()> {
        if panel.stock_ids.len() != STOCKS_PER_CONTEST {
            return Err(Error::parse(
                path_str(path),
                line,
                format!(
                    "contest {} has {} rows; every contest requires exactly {}",
                    panel.contest_id,
                    panel.stock_ids.len(),
                    STOCKS_PER_CONTEST
                ),
            ));
        }
        panel.validate()?;
        panels.push(panel);
        Ok(())
    };

    for rec in records {
        let rec = rec.map_err(|e| Error::parse(path_str(path), 0, e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != fields.len() {
            return Err(Error::parse(
                path_str(path),
                line,
                format!("row has {} fields; expected {}", rec.len(), fields.len()),
            ));
        }
        let contest_id = rec[0].to_string();
        let stock_id = rec[1].to_string();
        let mut row = Vec::with_capacity(lags);
        for k in 0..lags {
            row.push(parse_f64(
                path,
                line,
                &rec[2 + k],
                &format!("weekly return w{}", k + 1),
            )?);
        }
        let realized = parse_f64(path, line, &rec[2 + lags], "realized_next")?;

        let start_new = match &current {
            Some((panel, _)) => panel.contest_id != contest_id,
            None => true,
        };
        if start_new {
            if let Some((panel, last_line)) = current.take() {
                finish(panel, last_line, &mut panels)?;
            }
            if seen_ids.insert(contest_id.clone(), ()).is_some() {
                return Err(Error::parse(
                    path_str(path),
                    line,
                    format!("contest {contest_id} rows are not consecutive"),
                ));
            }
            current = Some((
                ContestPanel {
                    contest_id,
                    stock_ids: Vec::new(),
                    returns: Vec::new(),
                    realized_next: Vec::new(),
                    daily_ohlc: None,
                },
                line,
            ));
        }
        let (panel, last_line) = current.as_mut().expect("current contest set above");
        *last_line = line;
        if panel.stock_ids.contains(&stock_id) {
            return Err(Error::parse(
                path_str(path),
                line,
                format!("contest {} repeats stock id {}", panel.contest_id, stock_id),
            ));
        }
        if panel.stock_ids.len() == STOCKS_PER_CONTEST {
            return Err(Error::parse(
                path_str(path),
                line,
                format!(
                    "contest {} has more than {} rows",
                    panel.contest_id, STOCKS_PER_CONTEST
                ),
            ));
        }
        panel.stock_ids.push(stock_id);
        panel.returns.push(row);
        panel.realized_next.push(realized);
    }
    if let Some((panel, last_line)) = current.take() {
        finish(panel, last_line, &mut panels)?;
    }
    if panels.is_empty() {
        return Err(Error::parse(path_str(path), 1, "file contains no contests"));
    }
    Ok(panels)
}

/// Writes one monthly series to `path` as `month,return` rows.
pub fn write_monthly_series(path: &Path, series: &MonthlySeries) -> Result<()> {
    series.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path_str(path), e);
    writeln!(w, "month,return").map_err(io_err)?;
    for (m, r) in series.months.iter().zip(&series.returns) {
        writeln!(w, "{m},{r}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Loads one monthly series; the series id is the file stem.
pub fn load_monthly_series(path: &Path) -> Result<MonthlySeries> {
    let series_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let mut reader = open_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| Error::parse(path_str(path), 1, e.to_string()))?,
        None => {
            return Err(Error::parse(
                path_str(path),
                1,
                "empty file; expected header",
            ))
        }
    };
    if header.len() != 2 || &header[0] != "month" || &header[1] != "return" {
        return Err(Error::parse(
            path_str(path),
            1,
            "header must be month,return",
        ));
    }
    let mut months = Vec::new();
    let mut returns = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::parse(path_str(path), 0, e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(Error::parse(
                path_str(path),
                line,
                format!("row has {} fields; expected 2", rec.len()),
            ));
        }
        let month: Month = rec[0]
            .parse()
            .map_err(|e: Error| Error::parse(path_str(path), line, e.to_string()))?;
        months.push(month);
        returns.push(parse_f64(path, line, &rec[1], "monthly return")?);
    }
    let series = MonthlySeries {
        series_id,
        months,
        returns,
    };
    series.validate()?;
    if series.is_empty() {
        return Err(Error::parse(path_str(path), 1, "file contains no months"));
    }
    Ok(series)
}

/// Writes the OHLC blocks of `panels` to a sidecar file. Panels without an
/// OHLC block are skipped.
pub fn write_ohlc(path: &Path, panels: &[ContestPanel]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path_str(path), e);
    writeln!(w, "contest_id,stock_id,date,open,high,low,close").map_err(io_err)?;
    for p in panels {
        let Some(ohlc) = &p.daily_ohlc else { continue };
        for (sid, bars) in p.stock_ids.iter().zip(ohlc) {
            for b in bars {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    p.contest_id, sid, b.date, b.open, b.high, b.low, b.close
                )
                .map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Loads an OHLC sidecar and attaches the blocks to the matching panels.
/// Every `(contest_id, stock_id)` in the file must exist in `panels`, and
/// every listed contest must end up fully covered.
pub fn load_ohlc(path: &Path, panels: &mut [ContestPanel]) -> Result<()> {
    let mut reader = open_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| Error::parse(path_str(path), 1, e.to_string()))?,
        None => {
            return Err(Error::parse(
                path_str(path),
                1,
                "empty file; expected header",
            ))
        }
    };
    let expected = [
        "contest_id",
        "stock_id",
        "date",
        "open",
        "high",
        "low",
        "close",
    ];
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::parse(
            path_str(path),
            1,
            "header must be contest_id,stock_id,date,open,high,low,close",
        ));
    }
    let index: BTreeMap<String, usize> = panels
        .iter()
        .enumerate()
        .map(|(i, p)| (p.contest_id.clone(), i))
        .collect();
    let mut blocks: BTreeMap<(String, String), Vec<DailyBar>> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::parse(path_str(path), 0, e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != expected.len() {
            return Err(Error::parse(
                path_str(path),
                line,
                format!("row has {} fields; expected {}", rec.len(), expected.len()),
            ));
        }
        let contest_id = rec[0].to_string();
        let stock_id = rec[1].to_string();
        let panel_idx = *index.get(&contest_id).ok_or_else(|| {
            Error::parse(
                path_str(path),
                line,
                format!("unknown contest id {contest_id}"),
            )
        })?;
        if !panels[panel_idx].stock_ids.contains(&stock_id) {
            return Err(Error::parse(
                path_str(path),
                line,
                format!("contest {contest_id} has no stock {stock_id}"),
            ));
        }
        let date = NaiveDate::parse_from_str(&rec[2], "%Y-%m-%d").map_err(|_| {
            Error::parse(path_str(path), line, format!("invalid date `{}`", &rec[2]))
        })?;
        let bar = DailyBar {
            date,
            open: parse_f64(path, line, &rec[3], "open")?,
            high: parse_f64(path, line, &rec[4], "high")?,
            low: parse_f64(path, line, &rec[5], "low")?,
            close: parse_f64(path, line, &rec[6], "close")?,
        };
        bar.validate()?;
        let entry = blocks.entry((contest_id, stock_id)).or_default();
        if let Some(last) = entry.last() {
            if bar.date <= last.date {
                return Err(Error::parse(
                    path_str(path),
                    line,
                    format!("dates not strictly increasing at {}", bar.date),
                ));
            }
        }
        entry.push(bar);
    }
    let mut touched: Vec<String> = blocks.keys().map(|(c, _)| c.clone()).collect();
    touched.dedup();
    for contest_id in touched {
        let idx = index[&contest_id];
        let panel = &mut panels[idx];
        let mut ohlc = Vec::with_capacity(STOCKS_PER_CONTEST);
        for sid in panel.stock_ids.clone() {
            let bars = blocks
                .remove(&(contest_id.clone(), sid.clone()))
                .ok_or_else(|| {
                    Error::InvalidData(format!(
                        "OHLC sidecar covers contest {contest_id} but omits stock {sid}"
                    ))
                })?;
            ohlc.push(bars);
        }
        panel.daily_ohlc = Some(ohlc);
        panel.validate()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{synth_contests, synth_monthly, MonthlySynthConfig, SynthConfig};

    fn synth(n: usize, with_ohlc: bool) -> Vec<ContestPanel> {
        synth_contests(&SynthConfig {
            n_contests: n,
            lags: 12,
            reversal_coeff: -0.2,
            noise_sd: 0.03,
            seed: 42,
            with_ohlc,
        })
        .unwrap()
    }

    #[test]
    fn contest_round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contests.csv");
        let panels = synth(7, false);
        write_contest_panel(&path, &panels).unwrap();
        let loaded = load_contest_panel(&path).unwrap();
        assert_eq!(panels, loaded, "load(write(p)) must equal p field-exactly");
    }

    #[test]
    fn ohlc_round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let contests = dir.path().join("contests.csv");
        let sidecar = dir.path().join("ohlc.csv");
        let panels = synth(3, true);
        let mut stripped: Vec<ContestPanel> = panels
            .iter()
            .cloned()
            .map(|mut p| {
                p.daily_ohlc = None;
                p
            })
            .collect();
        write_contest_panel(&contests, &stripped).unwrap();
        write_ohlc(&sidecar, &panels).unwrap();
        load_ohlc(&sidecar, &mut stripped).unwrap();
        assert_eq!(panels, stripped);
    }

    #[test]
    fn eleven_row_contest_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contests.csv");
        let panels = synth(1, false);
        write_contest_panel(&path, &panels).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let extra = text.lines().last().unwrap().replace(",T10,", ",T11,");
        text.push_str(&extra);
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        let err = load_contest_panel(&path).unwrap_err();
        match err {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 12, "error should point at the offending row");
                assert!(msg.contains("more than 10 rows"), "got: {msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn nine_row_contest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contests.csv");
        write_contest_panel(&path, &synth(2, false)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(5); // drop one row of the first contest
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = load_contest_panel(&path).unwrap_err();
        assert!(
            err.to_string().contains("requires exactly 10"),
            "got: {err}"
        );
    }

    #[test]
    fn non_numeric_field_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contests.csv");
        write_contest_panel(&path, &synth(1, false)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3]
            .replacen(",-0.", ",x0.", 1)
            .replacen(",0.", ",x.", 1);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = load_contest_panel(&path).unwrap_err();
        match err {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 4);
                assert!(msg.contains("non-numeric"), "got: {msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn wrong_column_count_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contests.csv");
        write_contest_panel(&path, &synth(1, false)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2].push_str(",0.01");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = load_contest_panel(&path).unwrap_err();
        match err {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("expected 15"), "got: {msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contests.csv");
        std::fs::write(&path, "contest,stock,w1,realized_next\n").unwrap();
        assert!(load_contest_panel(&path).is_err());
    }

    #[test]
    fn monthly_round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sp500.csv");
        let series = synth_monthly(&MonthlySynthConfig {
            n_series: 1,
            n_months: 48,
            mean: 0.006,
            sd: 0.04,
            seed: 5,
            stagger_months: 1,
        })
        .unwrap()
        .remove(0);
        write_monthly_series(&path, &series).unwrap();
        let loaded = load_monthly_series(&path).unwrap();
        assert_eq!(
            loaded.series_id, "sp500",
            "series id comes from the file stem"
        );
        assert_eq!(loaded.months, series.months);
        assert_eq!(loaded.returns, series.returns);
    }

    #[test]
    fn monthly_bad_month_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "month,return\n2010-01,0.02\n2010-February,0.01\n").unwrap();
        let err = load_monthly_series(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn ohlc_unknown_stock_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sidecar = dir.path().join("ohlc.csv");
        let panels = synth(1, true);
        write_ohlc(&sidecar, &panels).unwrap();
        let text = std::fs::read_to_string(&sidecar)
            .unwrap()
            .replace(",T03,", ",ZZ9,");
        std::fs::write(&sidecar, text).unwrap();
        let mut stripped = synth(1, false);
        let err = load_ohlc(&sidecar, &mut stripped).unwrap_err();
        assert!(err.to_string().contains("no stock ZZ9"), "got: {err}");
    }
}

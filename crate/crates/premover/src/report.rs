//! Report files: metrics as JSON, CSV and an aligned text table, sweep CSVs
//! and per-episode JSON lines.

use std::fmt::Write as _;
use std::path::Path;

use premover_core::metrics::{fmt_sig4, MetricsTable, SweepPoint};
use premover_core::simworld::EpisodeReport;
use serde::Serialize;

use crate::config::RunConfig;
use crate::harness::SettingRun;
use crate::AppError;

pub const EPISODE_SCHEMA: &str = "premover-episode-v1";
pub const METRICS_SCHEMA: &str = "premover-metrics-v1";
pub const SWEEP_SCHEMA: &str = "premover-sweep-v1";

/// Write through a temporary sibling so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> Result<String, AppError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| AppError::Runtime(format!("json encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v}"),
        None => "--".into(),
    }
}

/// Full-precision CSV, one row per (suite, setting).
pub fn metrics_csv(t: &MetricsTable) -> String {
    let mut s = String::from(
        "suite,setting,episodes,successes,success_pct,wall_all_seconds,wall_succ_seconds,wall_all_pct_of_full,wall_succ_pct_of_full\n",
    );
    for r in &t.rows {
        let c = &r.cell;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.suite,
            r.setting,
            c.episodes,
            c.successes,
            c.success_pct,
            c.wall_all_seconds,
            opt(c.wall_succ_seconds),
            opt(c.wall_all_pct_of_full),
            opt(c.wall_succ_pct_of_full)
        );
    }
    s
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i == 0 {
                    format!("{v:<w$}", w = widths[i])
                } else {
                    format!("{v:>w$}", w = widths[i])
                }
            })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

/// Suites down, settings across; each setting shows success %, mean wall
/// seconds over all and over successful episodes, and wall % of full prompt.
pub fn metrics_text(t: &MetricsTable) -> String {
    let mut header = vec!["suite".to_string()];
    for st in &t.settings {
        for m in ["SR%", "wall_all", "wall_succ", "%full"] {
            header.push(format!("{st}:{m}"));
        }
    }
    let mut rows = vec![header];
    for suite in &t.suites {
        let mut row = vec![suite.clone()];
        for st in &t.settings {
            match t.get(suite, st) {
                Some(c) => row.extend([
                    fmt_sig4(Some(c.success_pct)),
                    fmt_sig4(Some(c.wall_all_seconds)),
                    fmt_sig4(c.wall_succ_seconds),
                    fmt_sig4(c.wall_all_pct_of_full),
                ]),
                None => row.extend(std::iter::repeat_n("--".to_string(), 4)),
            }
        }
        rows.push(row);
    }
    aligned(&rows)
}

/// Sweep as CSV with a named value column.
pub fn sweep_csv(column: &str, points: &[SweepPoint]) -> String {
    let mut s = format!("{column},episodes,success_pct,wall_all_seconds\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.value, p.episodes, p.success_pct, p.wall_all_seconds);
    }
    s
}

pub fn sweep_text(column: &str, points: &[SweepPoint], selected: Option<f64>) -> String {
    let mut rows = vec![vec![
        column.to_string(),
        "episodes".into(),
        "SR%".into(),
        "wall_all".into(),
        String::new(),
    ]];
    for p in points {
        rows.push(vec![
            format!("{}", p.value),
            p.episodes.to_string(),
            fmt_sig4(Some(p.success_pct)),
            fmt_sig4(Some(p.wall_all_seconds)),
            if selected == Some(p.value) {
                "*".into()
            } else {
                String::new()
            },
        ]);
    }
    aligned(&rows)
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    schema: &'static str,
    setting: &'a str,
    #[serde(flatten)]
    report: &'a EpisodeReport,
}

/// One `premover-episode-v1` JSON object per line.
pub fn episodes_jsonl(runs: &[SettingRun]) -> Result<String, AppError> {
    let mut s = String::new();
    for run in runs {
        for r in &run.reports {
            let line = EpisodeLine {
                schema: EPISODE_SCHEMA,
                setting: run.setting.name(),
                report: r,
            };
            s.push_str(&serde_json::to_string(&line).map_err(|e| AppError::Runtime(e.to_string()))?);
            s.push('\n');
        }
    }
    Ok(s)
}

#[derive(Serialize)]
pub struct MetricsDoc<'a> {
    pub schema: &'static str,
    pub config: &'a RunConfig,
    pub alpha: f64,
    pub alpha_source: &'static str,
    pub calibration: &'a [SweepPoint],
    pub table: &'a MetricsTable,
}

#[derive(Serialize)]
pub struct SweepDoc<'a> {
    pub schema: &'static str,
    pub config: &'a RunConfig,
    pub parameter: &'static str,
    pub alpha: Option<f64>,
    pub points: &'a [SweepPoint],
    pub selected: Option<f64>,
}

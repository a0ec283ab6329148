//! Per-suite, per-setting aggregation of episode reports, sweep selection and
//! the fixed-precision number format shared by every text table.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::simworld::{EpisodeReport, Protocol};
use crate::{Error, Result};

/// Pooled row name covering every suite.
pub const ALL_SUITES: &str = "all";

/// One (suite, setting) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub episodes: usize,
    pub successes: usize,
    pub success_pct: f64,
    pub wall_all_seconds: f64,
    /// Absent when no episode succeeded.
    pub wall_succ_seconds: Option<f64>,
    /// Percent of the full-prompt cell of the same suite (full prompt = 100).
    pub wall_all_pct_of_full: Option<f64>,
    pub wall_succ_pct_of_full: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub suite: String,
    pub setting: String,
    pub cell: Cell,
}

/// Rows ordered by suite (input order, pooled row last) then setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsTable {
    pub settings: Vec<String>,
    pub suites: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn get(&self, suite: &str, setting: &str) -> Option<&Cell> {
        self.rows
            .iter()
            .find(|r| r.suite == suite && r.setting == setting)
            .map(|r| &r.cell)
    }
}

fn cell_of(reports: &[&EpisodeReport]) -> Cell {
    let n = reports.len();
    let successes = reports.iter().filter(|r| r.success).count();
    let wall_all = reports.iter().map(|r| r.wall_seconds).sum::<f64>() / n as f64;
    let wall_succ = (successes > 0).then(|| {
        reports
            .iter()
            .filter(|r| r.success)
            .map(|r| r.wall_seconds)
            .sum::<f64>()
            / successes as f64
    });
    Cell {
        episodes: n,
        successes,
        success_pct: 100.0 * successes as f64 / n as f64,
        wall_all_seconds: wall_all,
        wall_succ_seconds: wall_succ,
        wall_all_pct_of_full: None,
        wall_succ_pct_of_full: None,
    }
}

/// Group `(setting label, report)` pairs by suite and label, pooling every
/// suite into an extra [`ALL_SUITES`] row. Ratios are filled when a cell
/// labelled `full_label` exists for the suite.
pub fn aggregate_labeled<'a>(
    labeled: impl IntoIterator<Item = (&'a str, &'a EpisodeReport)>,
    full_label: &str,
) -> Result<MetricsTable> {
    let mut suites: Vec<String> = Vec::new();
    let mut settings: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<&EpisodeReport>> = BTreeMap::new();
    for (l, r) in labeled {
        let si = index_of(&mut suites, &r.suite);
        let li = index_of(&mut settings, l);
        cells.entry((si, li)).or_default().push(r);
    }
    if cells.is_empty() {
        return Err(Error::Config("no episode reports to aggregate".into()));
    }
    let pooled = suites.len();
    for li in 0..settings.len() {
        let all: Vec<&EpisodeReport> = (0..pooled)
            .filter_map(|si| cells.get(&(si, li)))
            .flatten()
            .copied()
            .collect();
        cells.insert((pooled, li), all);
    }
    suites.push(ALL_SUITES.to_string());

    let full = settings.iter().position(|s| s == full_label);
    let mut rows = Vec::new();
    for (si, suite) in suites.iter().enumerate() {
        let base = full.and_then(|f| cells.get(&(si, f))).map(|c| cell_of(c));
        for (li, setting) in settings.iter().enumerate() {
            let Some(rs) = cells.get(&(si, li)) else { continue };
            let mut cell = cell_of(rs);
            if let Some(b) = &base {
                cell.wall_all_pct_of_full = Some(100.0 * cell.wall_all_seconds / b.wall_all_seconds);
                cell.wall_succ_pct_of_full = match (cell.wall_succ_seconds, b.wall_succ_seconds) {
                    (Some(w), Some(bw)) => Some(100.0 * w / bw),
                    _ => None,
                };
            }
            rows.push(MetricsRow {
                suite: suite.clone(),
                setting: setting.clone(),
                cell,
            });
        }
    }
    Ok(MetricsTable { settings, suites, rows })
}

/// Aggregate with protocol names as setting labels.
pub fn aggregate(reports: &[EpisodeReport]) -> Result<MetricsTable> {
    aggregate_labeled(
        reports.iter().map(|r| (r.protocol.name(), r)),
        Protocol::FullPrompt.name(),
    )
}

fn index_of(list: &mut Vec<String>, key: &str) -> usize {
    match list.iter().position(|s| s == key) {
        Some(i) => i,
        None => {
            list.push(key.to_string());
            list.len() - 1
        }
    }
}

/// Four significant digits; `"--"` when absent.
pub fn fmt_sig4(x: Option<f64>) -> String {
    let Some(x) = x else { return "--".to_string() };
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.000".to_string();
    }
    let digits = libm::floor(libm::log10(libm::fabs(x))) as i32 + 1;
    let mut decimals = (4 - digits).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    // Rounding may carry into a new leading digit (9.9996 -> 10.000).
    let rounded: f64 = s.parse().unwrap_or(x);
    if libm::fabs(rounded) >= libm::pow(10.0, digits as f64) && decimals > 0 {
        decimals -= 1;
        s = format!("{x:.decimals$}");
    }
    s
}

/// Mean success of one sweep grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub episodes: usize,
    pub success_pct: f64,
    pub wall_all_seconds: f64,
}

impl SweepPoint {
    pub fn from_reports(value: f64, reports: &[EpisodeReport]) -> Self {
        let n = reports.len().max(1);
        Self {
            value,
            episodes: reports.len(),
            success_pct: 100.0 * reports.iter().filter(|r| r.success).count() as f64 / n as f64,
            wall_all_seconds: reports.iter().map(|r| r.wall_seconds).sum::<f64>() / n as f64,
        }
    }
}

/// Grid value with the highest success; ties go to the larger value.
pub fn select_best(points: &[SweepPoint]) -> Result<f64> {
    points
        .iter()
        .copied()
        .reduce(|best, p| {
            if p.success_pct > best.success_pct || (p.success_pct == best.success_pct && p.value > best.value) {
                p
            } else {
                best
            }
        })
        .map(|p| p.value)
        .ok_or_else(|| Error::Config("empty sweep grid".into()))
}

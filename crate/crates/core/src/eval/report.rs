use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::offline::{summarize_windows, WindowRecord, WindowReport};
use super::online::{summarize_rollouts, EpisodeLog, RolloutReport};
use crate::dataset::{Difficulty, EpisodeRecord, Split};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
/// Width of a trajectory-length bin, in steps.
pub const LENGTH_BIN: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub split: Split,
    pub difficulty: Difficulty,
    /// Inclusive lower edge; the bin covers `bin_start .. bin_start + 5`.
    pub bin_start: usize,
    pub count: usize,
}

/// Episode lengths binned per (split, difficulty), ascending bins.
pub fn trajectory_length_histogram(records: &[EpisodeRecord]) -> Vec<HistogramRow> {
    let mut bins: BTreeMap<(Split, Difficulty, usize), usize> = BTreeMap::new();
    for r in records {
        let len = r.trajectory.len();
        *bins
            .entry((
                r.split,
                r.trajectory.spec.difficulty,
                len / LENGTH_BIN * LENGTH_BIN,
            ))
            .or_default() += 1;
    }
    bins.into_iter()
        .map(|((split, difficulty, bin_start), count)| HistogramRow {
            split,
            difficulty,
            bin_start,
            count,
        })
        .collect()
}

pub fn length_histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("split,difficulty,bin_start,bin_end,count\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.split.as_str(),
            r.difficulty.as_str(),
            r.bin_start,
            r.bin_start + LENGTH_BIN,
            r.count
        );
    }
    out
}

fn key<T: Serialize>(v: Option<T>) -> String {
    v.map_or_else(
        || "all".into(),
        |v| {
            serde_json::to_value(v)
                .ok()
                .and_then(|j| j.as_str().map(String::from))
                .unwrap_or_default()
        },
    )
}

/// One row per group and window start, plus an `all` row per group.
pub fn window_accuracy_csv(report: &WindowReport) -> String {
    let mut out =
        String::from("policy,category,difficulty,start,windows,steps,accuracy,variance\n");
    for g in &report.groups {
        let (c, d) = (key(g.category), key(g.difficulty));
        let windows: usize = g.by_start.iter().map(|s| s.windows).sum();
        let _ = writeln!(
            out,
            "{},{c},{d},all,{windows},{},{:.6},",
            g.policy, g.steps, g.accuracy
        );
        for s in &g.by_start {
            let _ = writeln!(
                out,
                "{},{c},{d},{},{},{},{:.6},{:.6}",
                g.policy, s.start, s.windows, s.steps, s.mean, s.variance
            );
        }
    }
    out
}

pub fn rollout_results_csv(report: &RolloutReport) -> String {
    let mut out =
        String::from("policy,category,difficulty,episodes,success,spl,mean_steps,max_steps\n");
    for g in &report.groups {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.3},{}",
            g.policy,
            key(g.category),
            key(g.difficulty),
            g.episodes,
            g.success,
            g.spl,
            g.mean_steps,
            g.max_steps
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub window_accuracy: Option<WindowReport>,
    pub rollouts: Option<RolloutReport>,
    pub length_histogram: Vec<HistogramRow>,
}

impl Report {
    /// Summaries recomputed from per-window and per-episode logs.
    pub fn from_logs(
        windows: &[WindowRecord],
        window_len: usize,
        episodes: &[EpisodeLog],
        length_histogram: Vec<HistogramRow>,
    ) -> Result<Self> {
        Ok(Report {
            version: REPORT_VERSION,
            window_accuracy: (!windows.is_empty()).then(|| summarize_windows(windows, window_len)),
            rollouts: if episodes.is_empty() {
                None
            } else {
                Some(summarize_rollouts(episodes)?)
            },
            length_histogram,
        })
    }

    /// Writes every report file into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        if let Some(w) = &self.window_accuracy {
            put("window_accuracy.csv", window_accuracy_csv(w))?;
        }
        if let Some(r) = &self.rollouts {
            put("rollout_results.csv", rollout_results_csv(r))?;
        }
        put(
            "length_histogram.csv",
            length_histogram_csv(&self.length_histogram),
        )?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format("report", e.to_string()))?;
        put("report.json", json + "\n")
    }
}

pub fn write_ndjson<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(
            &serde_json::to_string(r)
                .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::format(format!("{} line {}", path.display(), i + 1), e.to_string())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_inputs_do_not_crash() {
        assert!(trajectory_length_histogram(&[]).is_empty());
        assert_eq!(length_histogram_csv(&[]).lines().count(), 1);
        let r = Report::from_logs(&[], 8, &[], Vec::new()).unwrap();
        assert!(r.window_accuracy.is_none() && r.rollouts.is_none());
    }
}

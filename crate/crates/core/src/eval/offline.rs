use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::WindowPolicy;
use crate::dataset::{
    extract_window, partition_windows, Category, Difficulty, Trajectory, WorldCache,
};
use crate::error::{Error, Result};
use crate::seed::derive_rng;

const WINDOW_STREAM: u64 = 21;

/// Outcome of one teacher-forced window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub policy: String,
    pub episode: usize,
    pub category: Category,
    pub difficulty: Difficulty,
    pub start: usize,
    pub len: usize,
    pub correct: usize,
}

/// Scores every non-overlapping window `[0, t), [t, 2t), ...` of every
/// trajectory. Records are ordered by trajectory, then window.
pub fn window_records(
    policy: &dyn WindowPolicy,
    trajectories: &[&Trajectory],
    worlds: &WorldCache,
    t: usize,
    seed: u64,
) -> Result<Vec<WindowRecord>> {
    if t == 0 {
        return Err(Error::Contract("window length must be positive".into()));
    }
    let name = policy.name();
    let per_traj = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let world = worlds.world(&traj.spec.world);
            let mut rng = derive_rng(seed, WINDOW_STREAM, i as u64);
            partition_windows(traj.len(), t)
                .into_iter()
                .map(|(start, len)| {
                    let w = extract_window(world, traj, start, len)?;
                    let predicted = policy.predict_window(&w, &mut rng)?;
                    let correct = predicted
                        .iter()
                        .zip(&w.actions)
                        .filter(|(p, a)| **p == a.id())
                        .count();
                    Ok(WindowRecord {
                        policy: name.clone(),
                        episode: i,
                        category: traj.spec.category,
                        difficulty: traj.spec.difficulty,
                        start,
                        len,
                        correct,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_traj.into_iter().flatten().collect())
}

/// Mean and variance of per-window accuracy at one start index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartStat {
    pub start: usize,
    pub windows: usize,
    pub steps: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Accuracy over one slice of the records. `None` keys mean "all".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGroup {
    pub policy: String,
    pub category: Option<Category>,
    pub difficulty: Option<Difficulty>,
    pub steps: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub by_start: Vec<StartStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub groups: Vec<WindowGroup>,
}

impl WindowReport {
    pub fn group(
        &self,
        policy: &str,
        category: Option<Category>,
        difficulty: Option<Difficulty>,
    ) -> Option<&WindowGroup> {
        self.groups
            .iter()
            .find(|g| g.policy == policy && g.category == category && g.difficulty == difficulty)
    }
}

fn summarize_group(
    policy: &str,
    category: Option<Category>,
    difficulty: Option<Difficulty>,
    records: &[&WindowRecord],
) -> WindowGroup {
    let mut starts: BTreeMap<usize, Vec<&WindowRecord>> = BTreeMap::new();
    for r in records {
        starts.entry(r.start).or_default().push(r);
    }
    let by_start = starts
        .into_iter()
        .map(|(start, rs)| {
            let accs: Vec<f64> = rs.iter().map(|r| r.correct as f64 / r.len as f64).collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let variance = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
            StartStat {
                start,
                windows: rs.len(),
                steps: rs.iter().map(|r| r.len).sum(),
                mean,
                variance,
            }
        })
        .collect();
    let steps: usize = records.iter().map(|r| r.len).sum();
    let correct: usize = records.iter().map(|r| r.correct).sum();
    WindowGroup {
        policy: policy.into(),
        category,
        difficulty,
        steps,
        correct,
        accuracy: if steps == 0 {
            0.0
        } else {
            correct as f64 / steps as f64
        },
        by_start,
    }
}

/// Groups records per policy: overall, per difficulty, per category, and
/// per (category, difficulty). Empty groups are omitted.
pub fn summarize_windows(records: &[WindowRecord], window: usize) -> WindowReport {
    let mut policies: Vec<&str> = Vec::new();
    for r in records {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    let cats = [None, Some(Category::Straight), Some(Category::Curved)];
    let diffs = [
        None,
        Some(Difficulty::Easy),
        Some(Difficulty::Medium),
        Some(Difficulty::Hard),
    ];
    let mut groups = Vec::new();
    for p in policies {
        for c in cats {
            for d in diffs {
                let sel: Vec<&WindowRecord> = records
                    .iter()
                    .filter(|r| {
                        r.policy == p
                            && c.is_none_or(|c| r.category == c)
                            && d.is_none_or(|d| r.difficulty == d)
                    })
                    .collect();
                if !sel.is_empty() {
                    groups.push(summarize_group(p, c, d, &sel));
                }
            }
        }
    }
    WindowReport { window, groups }
}

pub fn offline_window_accuracy(
    policy: &dyn WindowPolicy,
    trajectories: &[&Trajectory],
    worlds: &WorldCache,
    t: usize,
    seed: u64,
) -> Result<WindowReport> {
    Ok(summarize_windows(
        &window_records(policy, trajectories, worlds, t, seed)?,
        t,
    ))
}

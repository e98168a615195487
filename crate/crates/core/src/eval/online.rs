use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::ContextBuffer;
use super::policy::{RolloutPolicy, StepContext};
use crate::dataset::{sample_episode_spec, Category, Difficulty, EpisodeSpec, WorldCache};
use crate::env::{is_success, render_observation, step, Action, Pose, World, WorldSpec};
use crate::error::{Error, Result};
use crate::seed::derive_rng;

const ROLLOUT_STREAM: u64 = 31;
const EVAL_SPEC_STREAM: u64 = 41;

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub actions: Vec<Action>,
    pub poses: Vec<Pose>,
    pub success: bool,
    /// Meters translated; blocked moves and turns add nothing.
    pub path_length: f64,
    /// Largest buffer occupancy seen.
    pub max_buffer_len: usize,
}

/// Closed-loop episode: render, push to the buffer, ask the policy, step.
/// Ends on STOP or after `max_steps` actions.
pub fn online_rollout(
    policy: &dyn RolloutPolicy,
    world: &World,
    spec: &EpisodeSpec,
    max_steps: usize,
    context: usize,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    let goal = render_observation(world, &spec.goal);
    let mut buffer = ContextBuffer::new(context);
    let mut pose = spec.start;
    let mut out = Rollout {
        actions: Vec::new(),
        poses: vec![pose],
        success: false,
        path_length: 0.0,
        max_buffer_len: 0,
    };
    let mut stopped = false;
    for _ in 0..max_steps {
        buffer.push(render_observation(world, &pose));
        out.max_buffer_len = out.max_buffer_len.max(buffer.len());
        let ctx = StepContext {
            world,
            pose,
            goal_pose: spec.goal,
            goal: &goal,
            buffer: &buffer,
        };
        let action = policy.act(&ctx, rng)?;
        buffer.set_last_action(action);
        let (next, done) = step(world, pose, action);
        out.path_length += pose.distance(&next);
        out.actions.push(action);
        out.poses.push(next);
        pose = next;
        if done {
            stopped = true;
            break;
        }
    }
    out.success = is_success(&pose, &spec.goal, stopped);
    Ok(out)
}

/// Per-episode result, also the on-disk log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub policy: String,
    pub episode: usize,
    pub category: Category,
    pub difficulty: Difficulty,
    pub max_steps: usize,
    pub steps: usize,
    pub success: bool,
    pub path_length: f64,
    pub shortest_length: f64,
    pub actions: Vec<u8>,
}

/// Runs one rollout per spec with the spec's step budget. Episode `i`
/// draws from its own seed stream, so thread count never matters.
pub fn run_rollouts(
    policy: &dyn RolloutPolicy,
    specs: &[EpisodeSpec],
    worlds: &WorldCache,
    context: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>> {
    let name = policy.name();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let world = worlds.world(&spec.world);
            let mut rng = derive_rng(seed, ROLLOUT_STREAM, i as u64);
            let r = online_rollout(policy, world, spec, spec.max_steps, context, &mut rng)?;
            Ok(EpisodeLog {
                policy: name.clone(),
                episode: i,
                category: spec.category,
                difficulty: spec.difficulty,
                max_steps: spec.max_steps,
                steps: r.actions.len(),
                success: r.success,
                path_length: r.path_length,
                shortest_length: spec.shortest_length(world),
                actions: r.actions.iter().map(|a| a.id() as u8).collect(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub path_length: f64,
    pub shortest_length: f64,
}

/// `(mean success, mean of S·l / max(p, l))`; `(0, 0)` for no episodes.
pub fn compute_success_spl(results: &[EpisodeOutcome]) -> Result<(f64, f64)> {
    if results.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut success = 0.0;
    let mut spl = 0.0;
    for r in results {
        if r.shortest_length.is_nan() || r.shortest_length <= 0.0 {
            return Err(Error::Contract(format!(
                "shortest length {} must be positive",
                r.shortest_length
            )));
        }
        if r.success {
            success += 1.0;
            spl += r.shortest_length / r.path_length.max(r.shortest_length);
        }
    }
    let n = results.len() as f64;
    Ok((success / n, spl / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub policy: String,
    pub category: Option<Category>,
    pub difficulty: Option<Difficulty>,
    pub episodes: usize,
    pub success: f64,
    pub spl: f64,
    pub mean_steps: f64,
    pub max_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub groups: Vec<RolloutGroup>,
}

impl RolloutReport {
    pub fn group(
        &self,
        policy: &str,
        category: Option<Category>,
        difficulty: Option<Difficulty>,
    ) -> Option<&RolloutGroup> {
        self.groups
            .iter()
            .find(|g| g.policy == policy && g.category == category && g.difficulty == difficulty)
    }
}

/// Same grouping as the window report: overall, per difficulty, per
/// category, per (category, difficulty).
pub fn summarize_rollouts(logs: &[EpisodeLog]) -> Result<RolloutReport> {
    let mut policies: Vec<&str> = Vec::new();
    for l in logs {
        if !policies.contains(&l.policy.as_str()) {
            policies.push(&l.policy);
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
                let sel: Vec<&EpisodeLog> = logs
                    .iter()
                    .filter(|l| {
                        l.policy == p
                            && c.is_none_or(|c| l.category == c)
                            && d.is_none_or(|d| l.difficulty == d)
                    })
                    .collect();
                if sel.is_empty() {
                    continue;
                }
                let outcomes: Vec<EpisodeOutcome> = sel
                    .iter()
                    .map(|l| EpisodeOutcome {
                        success: l.success,
                        path_length: l.path_length,
                        shortest_length: l.shortest_length,
                    })
                    .collect();
                let (success, spl) = compute_success_spl(&outcomes)?;
                groups.push(RolloutGroup {
                    policy: p.into(),
                    category: c,
                    difficulty: d,
                    episodes: sel.len(),
                    success,
                    spl,
                    mean_steps: sel.iter().map(|l| l.steps as f64).sum::<f64>() / sel.len() as f64,
                    max_steps: sel.iter().map(|l| l.max_steps).max().unwrap_or(0),
                });
            }
        }
    }
    Ok(RolloutReport { groups })
}

/// Counts of episodes per (category, difficulty), for logging.
pub fn episode_mix(specs: &[EpisodeSpec]) -> BTreeMap<(Category, Difficulty), usize> {
    let mut m = BTreeMap::new();
    for s in specs {
        *m.entry((s.category, s.difficulty)).or_default() += 1;
    }
    m
}

/// Fresh episodes for closed-loop evaluation: `per_difficulty` specs for
/// each difficulty, cycling through `worlds`. Built worlds are added to
/// `cache`.
pub fn evaluation_specs(
    worlds: &[WorldSpec],
    per_difficulty: usize,
    seed: u64,
    cache: &mut WorldCache,
) -> Result<Vec<EpisodeSpec>> {
    if worlds.is_empty() {
        return Err(Error::Config("no evaluation worlds".into()));
    }
    let mut specs = Vec::with_capacity(per_difficulty * Difficulty::ALL.len());
    for (d_idx, d) in Difficulty::ALL.into_iter().enumerate() {
        let mut rng = derive_rng(seed, EVAL_SPEC_STREAM, d_idx as u64);
        for i in 0..per_difficulty {
            let world = cache.ensure(worlds[i % worlds.len()])?;
            specs.push(sample_episode_spec(world, d, &mut rng)?);
        }
    }
    Ok(specs)
}

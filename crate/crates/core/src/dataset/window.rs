use rand::Rng;

use super::collect::Trajectory;
use crate::env::{render_observation, Action, Observation, World};
use crate::error::{Error, Result};

/// Contiguous slice of a trajectory with its observations rendered.
#[derive(Clone, Debug)]
pub struct Window {
    /// Index of the first step within the trajectory.
    pub start: usize,
    pub goal: Observation,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
}

impl Window {
    /// Number of real steps; at most the context length.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Loss mask padded to `t`: true for real steps.
    pub fn mask(&self, t: usize) -> Vec<bool> {
        (0..t).map(|i| i < self.len()).collect()
    }
}

/// Renders steps `start..start + len` of a trajectory.
pub fn extract_window(
    world: &World,
    traj: &Trajectory,
    start: usize,
    len: usize,
) -> Result<Window> {
    if start + len > traj.len() || len == 0 {
        return Err(Error::Contract(format!(
            "window {start}..{} outside trajectory of length {}",
            start + len,
            traj.len()
        )));
    }
    Ok(Window {
        start,
        goal: render_observation(world, &traj.spec.goal),
        observations: traj.poses[start..start + len]
            .iter()
            .map(|p| render_observation(world, p))
            .collect(),
        actions: traj.actions[start..start + len].to_vec(),
    })
}

/// Window of `t` steps at a uniform random start, or the whole trajectory
/// when it is shorter than `t`.
pub fn sample_training_window<R: Rng + ?Sized>(
    world: &World,
    traj: &Trajectory,
    t: usize,
    rng: &mut R,
) -> Result<Window> {
    if t == 0 {
        return Err(Error::Contract("context length must be at least 1".into()));
    }
    if traj.is_empty() {
        return Err(Error::Contract(
            "cannot sample a window from an empty trajectory".into(),
        ));
    }
    let len = traj.len().min(t);
    let start = rng.random_range(0..=traj.len() - len);
    extract_window(world, traj, start, len)
}

/// Non-overlapping windows `[0, t), [t, 2t), ...` covering the trajectory.
pub fn partition_windows(len: usize, t: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(t.max(1))
        .map(|s| (s, t.min(len - s)))
        .collect()
}

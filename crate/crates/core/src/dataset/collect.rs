use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::EpisodeSpec;
use super::planner::plan_shortest_path;
use crate::env::{is_success, step, Action, Pose, World};
use crate::error::{Error, Result};

/// Default probability of a random action for the noisy expert.
pub const DEFAULT_EPSILON: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Expert {
    Optimal,
    Noisy { epsilon: f64 },
}

impl Expert {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Expert::Noisy { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Executed expert episode. Observations are not stored; they are
/// re-rendered from `poses`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: EpisodeSpec,
    #[serde(with = "action_ids")]
    pub actions: Vec<Action>,
    pub poses: Vec<Pose>,
    pub success: bool,
    pub expert: Expert,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Translation distance covered, counting only moves that changed the
    /// position.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    /// Re-executes the actions and checks poses and the success flag.
    pub fn verify_replay(&self, world: &World) -> Result<()> {
        if self.poses.len() != self.actions.len() + 1 {
            return Err(Error::Contract(format!(
                "{} poses for {} actions",
                self.poses.len(),
                self.actions.len()
            )));
        }
        if !self.poses[0].bits_eq(&self.spec.start) {
            return Err(Error::Contract("first pose is not the start pose".into()));
        }
        let mut pose = self.spec.start;
        for (t, &action) in self.actions.iter().enumerate() {
            let (next, done) = step(world, pose, action);
            if !next.bits_eq(&self.poses[t + 1]) {
                return Err(Error::Contract(format!("pose mismatch after step {t}")));
            }
            if done && t + 1 != self.actions.len() {
                return Err(Error::Contract(format!(
                    "actions continue after STOP at step {t}"
                )));
            }
            pose = next;
        }
        let stopped = self.actions.last() == Some(&Action::Stop);
        if is_success(&pose, &self.spec.goal, stopped) != self.success {
            return Err(Error::Contract(
                "success flag disagrees with final pose".into(),
            ));
        }
        Ok(())
    }
}

/// Runs the expert on one episode. Failures (budget exhaustion, planning
/// errors after noise) are recorded in the success flag, not raised.
pub fn collect_episode<R: Rng + ?Sized>(
    world: &World,
    spec: &EpisodeSpec,
    expert: Expert,
    rng: &mut R,
) -> Trajectory {
    let mut pose = spec.start;
    let mut actions = Vec::new();
    let mut poses = vec![pose];
    let mut plan: Vec<Action> = Vec::new();
    let mut cursor = 0;
    let mut stopped = false;

    while actions.len() < spec.max_steps {
        let noisy = match expert {
            Expert::Optimal => false,
            Expert::Noisy { epsilon } => rng.random_bool(epsilon),
        };
        let action = if noisy {
            plan.clear();
            Action::from_id(rng.random_range(1..4)).expect("non-STOP id")
        } else {
            if cursor >= plan.len() {
                match plan_shortest_path(world, pose, spec.goal) {
                    Ok(p) => {
                        plan = p;
                        cursor = 0;
                    }
                    Err(e) => {
                        log::warn!("expert gave up: {e}");
                        break;
                    }
                }
            }
            cursor += 1;
            plan[cursor - 1]
        };
        let (next, done) = step(world, pose, action);
        actions.push(action);
        poses.push(next);
        pose = next;
        if done {
            stopped = true;
            break;
        }
    }

    Trajectory {
        spec: spec.clone(),
        success: is_success(&pose, &spec.goal, stopped),
        actions,
        poses,
        expert,
    }
}

/// Keeps successful trajectories only.
pub fn filter_successful(trajectories: Vec<Trajectory>) -> Vec<Trajectory> {
    let total = trajectories.len();
    let kept: Vec<Trajectory> = trajectories.into_iter().filter(|t| t.success).collect();
    if total > 0 && kept.is_empty() {
        log::warn!("none of {total} trajectories succeeded; filtered set is empty");
    }
    kept
}

mod action_ids {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::env::Action;

    pub fn serialize<S: Serializer>(actions: &[Action], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(actions.iter().map(|a| a.id() as u8))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Action>, D::Error> {
        Vec::<u8>::deserialize(d)?
            .into_iter()
            .map(|id| {
                Action::from_id(id as usize)
                    .ok_or_else(|| D::Error::custom(format!("invalid action id {id}")))
            })
            .collect()
    }
}

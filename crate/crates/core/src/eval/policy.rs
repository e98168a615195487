use rand::{Rng, RngCore};

use super::buffer::ContextBuffer;
use crate::dataset::{plan_shortest_path, Window};
use crate::env::{Action, Observation, Pose, World};
use crate::error::Result;
use crate::model::{greedy_action, predict, sample_action, ModelInput, ModelWeights, Sampling};

/// Predicts every action of a teacher-forced window.
pub trait WindowPolicy: Sync {
    fn name(&self) -> String;
    fn predict_window(&self, window: &Window, rng: &mut dyn RngCore) -> Result<Vec<usize>>;
}

/// Environment state visible to a rollout policy at one step. Learned
/// policies use only the goal observation and the buffer.
pub struct StepContext<'a> {
    pub world: &'a World,
    pub pose: Pose,
    pub goal_pose: Pose,
    pub goal: &'a Observation,
    /// Recent steps; the last entry holds the current observation and a
    /// placeholder action.
    pub buffer: &'a ContextBuffer,
}

pub trait RolloutPolicy: Sync {
    fn name(&self) -> String;
    fn act(&self, ctx: &StepContext<'_>, rng: &mut dyn RngCore) -> Result<Action>;
}

pub struct ModelPolicy<'a> {
    pub weights: &'a ModelWeights,
    pub sampling: Sampling,
}

impl<'a> ModelPolicy<'a> {
    /// Top-k sampling with the configured `k`.
    pub fn top_k(weights: &'a ModelWeights) -> Self {
        ModelPolicy {
            weights,
            sampling: Sampling::TopK(weights.config.top_k),
        }
    }

    pub fn greedy(weights: &'a ModelWeights) -> Self {
        ModelPolicy {
            weights,
            sampling: Sampling::Greedy,
        }
    }
}

impl WindowPolicy for ModelPolicy<'_> {
    fn name(&self) -> String {
        "model".into()
    }

    fn predict_window(&self, window: &Window, _rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let input = ModelInput::from_actions(&window.goal, &window.observations, &window.actions)?;
        Ok(predict(self.weights, &input)?
            .iter()
            .map(|row| greedy_action(row))
            .collect())
    }
}

impl RolloutPolicy for ModelPolicy<'_> {
    fn name(&self) -> String {
        "model".into()
    }

    fn act(&self, ctx: &StepContext<'_>, rng: &mut dyn RngCore) -> Result<Action> {
        let (obs, actions) = ctx.buffer.contents();
        let input = ModelInput::from_actions(ctx.goal, &obs, &actions)?;
        let logits = predict(self.weights, &input)?;
        let id = sample_action(
            logits.last().expect("buffer is non-empty"),
            self.sampling,
            rng,
        );
        Ok(Action::from_id(id).expect("sampled id is an environment action"))
    }
}

/// Returns the expert's own actions.
pub struct OraclePolicy;

impl WindowPolicy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_window(&self, window: &Window, _rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        Ok(window.actions.iter().map(|a| a.id()).collect())
    }
}

pub struct ConstantPolicy(pub Action);

impl WindowPolicy for ConstantPolicy {
    fn name(&self) -> String {
        format!("constant-{}", self.0.id())
    }

    fn predict_window(&self, window: &Window, _rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        Ok(vec![self.0.id(); window.len()])
    }
}

impl RolloutPolicy for ConstantPolicy {
    fn name(&self) -> String {
        format!("constant-{}", self.0.id())
    }

    fn act(&self, _ctx: &StepContext<'_>, _rng: &mut dyn RngCore) -> Result<Action> {
        Ok(self.0)
    }
}

/// Uniform over the four environment actions.
pub struct RandomPolicy;

impl WindowPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn predict_window(&self, window: &Window, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        Ok((0..window.len())
            .map(|_| rng.random_range(0..Action::ALL.len()))
            .collect())
    }
}

impl RolloutPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, _ctx: &StepContext<'_>, rng: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::ALL[rng.random_range(0..Action::ALL.len())])
    }
}

/// Replans from the true pose at every step.
pub struct ExpertPolicy;

impl RolloutPolicy for ExpertPolicy {
    fn name(&self) -> String {
        "expert".into()
    }

    fn act(&self, ctx: &StepContext<'_>, _rng: &mut dyn RngCore) -> Result<Action> {
        Ok(plan_shortest_path(ctx.world, ctx.pose, ctx.goal_pose)?[0])
    }
}

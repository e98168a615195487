use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::error::{Error, Result};

/// Number of environment actions the policy may emit.
pub const NUM_ENV_ACTIONS: usize = Action::ALL.len();
/// Id of the start-of-sequence token that fills the first action slot.
pub const SOS_ID: usize = NUM_ENV_ACTIONS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    /// Context length in timesteps.
    pub context: usize,
    /// Action vocabulary including the start-of-sequence token.
    pub num_actions: usize,
    pub obs_feature_dim: usize,
    pub mlp_hidden: usize,
    pub top_k: usize,
    /// Give every head the full model width instead of `d_model / heads`.
    pub full_width_heads: bool,
    pub activation: Activation,
    /// Seed of the frozen observation projection.
    pub projection_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        ModelConfig {
            layers: 12,
            heads: 8,
            d_model: 384,
            d_ffn: 1024,
            context: 8,
            num_actions: NUM_ENV_ACTIONS + 1,
            obs_feature_dim: 3840,
            mlp_hidden: 1024,
            top_k: 2,
            full_width_heads: false,
            activation: Activation::Gelu,
            projection_seed: 0,
        }
    }

    /// Small configuration that trains in minutes on one core.
    pub fn small() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ffn: 128,
            obs_feature_dim: 256,
            mlp_hidden: 128,
            ..Self::full()
        }
    }

    /// Smallest configuration used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_ffn: 16,
            context: 3,
            obs_feature_dim: 12,
            mlp_hidden: 8,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return bad("layers, heads, d_model and d_ffn must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.context == 0 {
            return bad("context must be at least 1".into());
        }
        if self.num_actions < NUM_ENV_ACTIONS + 1 {
            return bad(format!(
                "num_actions {} below {}",
                self.num_actions,
                NUM_ENV_ACTIONS + 1
            ));
        }
        if self.top_k == 0 || self.top_k > self.num_actions {
            return bad(format!(
                "top_k {} outside [1, {}]",
                self.top_k, self.num_actions
            ));
        }
        if self.obs_feature_dim == 0 || self.mlp_hidden == 0 {
            return bad("obs_feature_dim and mlp_hidden must be positive".into());
        }
        Ok(())
    }

    /// Width of one attention head.
    pub fn head_dim(&self) -> usize {
        if self.full_width_heads {
            self.d_model
        } else {
            self.d_model / self.heads
        }
    }

    /// Tokens in a sequence of `steps` timesteps: the goal plus one
    /// observation and one action token per step.
    pub fn sequence_len(steps: usize) -> usize {
        1 + 2 * steps
    }

    pub fn obs_len(&self) -> usize {
        Observation::LEN
    }
}

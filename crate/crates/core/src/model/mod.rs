//! Goal-conditioned decoder-only Transformer policy.
//!
//! A sequence holds the goal embedding followed by interleaved observation
//! and action embeddings; the action for step `t` is read from the hidden
//! state at the observation token of step `t`.

mod config;
mod forward;
mod sample;
mod weights;

pub use config::{Activation, ModelConfig, NUM_ENV_ACTIONS, SOS_ID};
pub use forward::{
    assemble_sequence, attention_head, decoder_layer, embed_actions, encode_observation,
    encode_observations, forward, mhsa, obs_token_index, predict, project_observations,
    shift_actions, token_roles, ModelInput, ModelVars, TokenRole,
};
pub use sample::{greedy_action, sample_action, Sampling};
pub use weights::{frozen_projection, LayerIdx, Layout, LinearIdx, ModelWeights, NormIdx};

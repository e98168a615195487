use super::config::{Activation, ModelConfig, SOS_ID};
use super::weights::{LayerIdx, LinearIdx, ModelWeights, NormIdx};
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tape, Var};

const LN_EPS: f64 = 1e-5;

/// Role of a token in the assembled sequence; timesteps count from 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenRole {
    Goal,
    Obs(usize),
    Act(usize),
}

/// `[goal, obs(0), act(0), obs(1), act(1), ...]` for `steps` timesteps.
pub fn token_roles(steps: usize) -> Vec<TokenRole> {
    let mut roles = vec![TokenRole::Goal];
    for t in 0..steps {
        roles.push(TokenRole::Obs(t));
        roles.push(TokenRole::Act(t));
    }
    roles
}

/// Sequence index of the observation token of step `t`.
pub fn obs_token_index(t: usize) -> usize {
    1 + 2 * t
}

/// A batch of equal-length windows. Actions are the unshifted history;
/// the shift happens inside [`forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub batch: usize,
    pub steps: usize,
    /// `[batch, Observation::LEN]`
    pub goals: Vec<f64>,
    /// `[batch, steps, Observation::LEN]`
    pub observations: Vec<f64>,
    /// `[batch, steps]`
    pub actions: Vec<usize>,
}

impl ModelInput {
    pub fn single(
        goal: &Observation,
        observations: &[Observation],
        actions: &[usize],
    ) -> Result<Self> {
        if observations.len() != actions.len() {
            return Err(Error::Contract(format!(
                "{} observations but {} actions",
                observations.len(),
                actions.len()
            )));
        }
        Ok(ModelInput {
            batch: 1,
            steps: observations.len(),
            goals: goal.data().to_vec(),
            observations: observations
                .iter()
                .flat_map(|o| o.data().iter().copied())
                .collect(),
            actions: actions.to_vec(),
        })
    }

    /// Single sequence from environment actions.
    pub fn from_actions(
        goal: &Observation,
        observations: &[Observation],
        actions: &[Action],
    ) -> Result<Self> {
        let ids: Vec<usize> = actions.iter().map(|a| a.id()).collect();
        Self::single(goal, observations, &ids)
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.steps > config.context {
            return Err(Error::ContextOverflow {
                got: self.steps,
                max: config.context,
            });
        }
        let l = Observation::LEN;
        let ok = self.goals.len() == self.batch * l
            && self.observations.len() == self.batch * self.steps * l
            && self.actions.len() == self.batch * self.steps;
        if !ok || self.steps == 0 || self.batch == 0 {
            return Err(Error::Contract("malformed model input".into()));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= config.num_actions) {
            return Err(Error::Contract(format!("action id {a} outside vocabulary")));
        }
        Ok(())
    }
}

/// Tape handles for every trainable tensor, in [`ModelWeights::params`] order.
pub struct ModelVars<'t> {
    pub vars: Vec<Var<'t>>,
}

impl<'t> ModelVars<'t> {
    /// Parameters as gradient-tracking leaves.
    pub fn leaves(tape: &'t Tape, weights: &ModelWeights) -> Self {
        ModelVars {
            vars: weights.params.iter().map(|p| tape.leaf(p)).collect(),
        }
    }

    /// Parameters as constants, for inference.
    pub fn constants(tape: &'t Tape, weights: &ModelWeights) -> Self {
        ModelVars {
            vars: weights.params.iter().map(|p| tape.constant(p)).collect(),
        }
    }

    fn linear(&self, x: Var<'t>, idx: LinearIdx) -> Result<Var<'t>> {
        Ok(x.matmul(&self.vars[idx.w])?.add_bias(&self.vars[idx.b])?)
    }

    fn norm(&self, x: Var<'t>, idx: NormIdx) -> Result<Var<'t>> {
        Ok(x.layer_norm(&self.vars[idx.gain], &self.vars[idx.bias], LN_EPS)?)
    }
}

fn activate<'t>(x: Var<'t>, act: Activation) -> Var<'t> {
    match act {
        Activation::Gelu => x.gelu(),
        Activation::Relu => x.relu(),
    }
}

/// Applies the frozen projection to `n` flattened observations. Runs
/// outside the tape: nothing upstream of the projection is trainable.
pub fn project_observations(weights: &ModelWeights, rows: &[f64], n: usize) -> Vec<f64> {
    let f = weights.config.obs_feature_dim;
    let mut out = vec![0.0; n * f];
    gemm(
        n,
        Observation::LEN,
        f,
        rows,
        false,
        weights.frozen_projection.data(),
        false,
        &mut out,
        false,
    );
    out
}

/// Observation embeddings `[n, d]`: frozen projection, then the trainable
/// two-layer MLP.
pub fn encode_observations<'t>(
    tape: &'t Tape,
    weights: &ModelWeights,
    vars: &ModelVars<'t>,
    rows: &[f64],
    n: usize,
) -> Result<Var<'t>> {
    let features = project_observations(weights, rows, n);
    let x = tape.constant_from(vec![n, weights.config.obs_feature_dim], features)?;
    let h = activate(
        vars.linear(x, weights.layout.enc1)?,
        weights.config.activation,
    );
    vars.linear(h, weights.layout.enc2)
}

/// Embedding of a single observation.
pub fn encode_observation(weights: &ModelWeights, obs: &Observation) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let vars = ModelVars::constants(&tape, weights);
    Ok(encode_observations(&tape, weights, &vars, obs.data(), 1)?.data())
}

/// Shift right by one step per sequence, filling slot 0 with SOS.
pub fn shift_actions(actions: &[usize], steps: usize) -> Vec<usize> {
    actions
        .chunks(steps)
        .flat_map(|seq| std::iter::once(SOS_ID).chain(seq[..seq.len() - 1].iter().copied()))
        .collect()
}

/// Rows of the action table for already-shifted ids.
pub fn embed_actions<'t>(
    weights: &ModelWeights,
    vars: &ModelVars<'t>,
    shifted: &[usize],
) -> Result<Var<'t>> {
    Ok(vars.vars[weights.layout.action_embedding].embedding_lookup(shifted)?)
}

/// Interleaves goal, observation and action embeddings into `[B*S, d]`,
/// adding position `t` to both tokens of step `t`.
pub fn assemble_sequence<'t>(
    tape: &'t Tape,
    positions: Var<'t>,
    goal: Var<'t>,
    obs: Var<'t>,
    act: Var<'t>,
    batch: usize,
    steps: usize,
) -> Result<Var<'t>> {
    let max = positions.shape()[0];
    if steps > max {
        return Err(Error::ContextOverflow { got: steps, max });
    }
    let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..steps).collect();
    let pos = positions.embedding_lookup(&pos_ids)?;
    let obs = obs.add(&pos)?;
    let act = act.add(&pos)?;
    let all = tape.concat(&[goal, obs, act], 0)?;
    let (obs_base, act_base) = (batch, batch + batch * steps);
    let mut order = Vec::with_capacity(batch * ModelConfig::sequence_len(steps));
    for b in 0..batch {
        order.push(b);
        for t in 0..steps {
            order.push(obs_base + b * steps + t);
            order.push(act_base + b * steps + t);
        }
    }
    Ok(all.embedding_lookup(&order)?)
}

/// Single causal attention head over one sequence `x: [S, d]`, returning
/// `softmax(mask(Q·Kᵀ / √d_k))·V` with shape `[S, d_k]`.
pub fn attention_head<'t>(x: Var<'t>, wq: Var<'t>, wk: Var<'t>, wv: Var<'t>) -> Result<Var<'t>> {
    let dk = wq.shape()[1];
    let q = x.matmul(&wq)?;
    let k = x.matmul(&wk)?;
    let v = x.matmul(&wv)?;
    let scores = q
        .matmul_t(&k)?
        .scale(1.0 / (dk as f64).sqrt())
        .causal_mask()?;
    Ok(scores.softmax(1)?.matmul(&v)?)
}

/// Multi-head causal self-attention over `x: [B*S, d]`.
pub fn mhsa<'t>(
    config: &ModelConfig,
    vars: &ModelVars<'t>,
    layer: &LayerIdx,
    x: Var<'t>,
    batch: usize,
    seq: usize,
) -> Result<Var<'t>> {
    let (h, dk) = (config.heads, config.head_dim());
    let split = |y: Var<'t>| -> Result<Var<'t>> {
        Ok(y.reshape(&[batch, seq, h, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * h, seq, dk])?)
    };
    let q = split(vars.linear(x, layer.q)?)?;
    let k = split(vars.linear(x, layer.k)?)?;
    let v = split(vars.linear(x, layer.v)?)?;
    let scores = q
        .matmul_t(&k)?
        .scale(1.0 / (dk as f64).sqrt())
        .causal_mask()?;
    let heads = scores.softmax(2)?.matmul(&v)?;
    let merged = heads
        .reshape(&[batch, h, seq, dk])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch * seq, h * dk])?;
    vars.linear(merged, layer.o)
}

/// Pre-LN block: `y = MHSA(LN(x)) + x`, then `z = FFN(LN(y)) + y`.
pub fn decoder_layer<'t>(
    config: &ModelConfig,
    vars: &ModelVars<'t>,
    layer: &LayerIdx,
    x: Var<'t>,
    batch: usize,
    seq: usize,
) -> Result<Var<'t>> {
    let y = mhsa(config, vars, layer, vars.norm(x, layer.ln1)?, batch, seq)?.add(&x)?;
    let hidden = activate(
        vars.linear(vars.norm(y, layer.ln2)?, layer.ffn1)?,
        config.activation,
    );
    Ok(vars.linear(hidden, layer.ffn2)?.add(&y)?)
}

/// Logits `[B*T', A]`, read at each observation token.
pub fn forward<'t>(
    tape: &'t Tape,
    weights: &ModelWeights,
    vars: &ModelVars<'t>,
    input: &ModelInput,
) -> Result<Var<'t>> {
    let config = &weights.config;
    input.validate(config)?;
    let (b, t) = (input.batch, input.steps);
    let layout = &weights.layout;

    let goal = encode_observations(tape, weights, vars, &input.goals, b)?;
    let obs = encode_observations(tape, weights, vars, &input.observations, b * t)?;
    let act = embed_actions(weights, vars, &shift_actions(&input.actions, t))?;
    let positions = vars.vars[layout.position_embedding];
    let mut x = assemble_sequence(tape, positions, goal, obs, act, b, t)?;

    let seq = ModelConfig::sequence_len(t);
    for layer in &layout.layers {
        x = decoder_layer(config, vars, layer, x, b, seq)?;
    }
    let x = vars.norm(x, layout.final_ln)?;
    let readout: Vec<usize> = (0..b)
        .flat_map(|i| (0..t).map(move |s| i * seq + obs_token_index(s)))
        .collect();
    let x = x.embedding_lookup(&readout)?;
    let h = activate(vars.linear(x, layout.head1)?, config.activation);
    vars.linear(h, layout.head2)
}

/// Logits as rows of plain vectors, computed without gradient tracking.
pub fn predict(weights: &ModelWeights, input: &ModelInput) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let vars = ModelVars::constants(&tape, weights);
    let logits = forward(&tape, weights, &vars, input)?;
    let a = weights.config.num_actions;
    Ok(logits.data().chunks(a).map(<[f64]>::to_vec).collect())
}

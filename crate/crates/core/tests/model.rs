mod common;

use common::{gradcheck, rng, weighted_sum};
use imgnav::env::{Observation, NUM_RAYS};
use imgnav::model::{
    assemble_sequence, attention_head, decoder_layer, embed_actions, encode_observation, forward,
    mhsa, predict, sample_action, shift_actions, ModelConfig, ModelInput, ModelVars, ModelWeights,
    Sampling, SOS_ID,
};
use imgnav::tensor::{Tape, Tensor};
use imgnav::Error;
use rand::Rng;

fn random_obs<R: Rng>(r: &mut R) -> Observation {
    let mut data = vec![0.0; Observation::LEN];
    for ray in 0..NUM_RAYS {
        data[ray] = r.random::<f64>();
        data[(1 + r.random_range(0..16)) * NUM_RAYS + ray] = 1.0;
    }
    Observation::from_data(data).unwrap()
}

fn random_input<R: Rng>(r: &mut R, steps: usize) -> ModelInput {
    let goal = random_obs(r);
    let obs: Vec<Observation> = (0..steps).map(|_| random_obs(r)).collect();
    let actions: Vec<usize> = (0..steps).map(|_| r.random_range(0..4)).collect();
    ModelInput::single(&goal, &obs, &actions).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn single_token_attends_to_itself() {
    let tape = Tape::new();
    let x = tape.constant(&t(&[1, 2], &[0.3, -1.2]));
    let wq = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let wk = tape.constant(&t(&[2, 2], &[-1.0, 0.5, 0.0, 2.0]));
    let wv = tape.constant(&t(&[2, 2], &[0.5, 1.0, -1.0, 0.0]));
    let out = attention_head(x, wq, wk, wv).unwrap();
    let v = x.matmul(&wv).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn uniform_scores_give_prefix_means() {
    // Zero query/key weights make every unmasked score equal.
    let tape = Tape::new();
    let x = tape.constant(&t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]));
    let zero = tape.constant(&Tensor::zeros(&[2, 2]));
    let eye = tape.constant(&Tensor::eye(2));
    let out = attention_head(x, zero, zero, eye).unwrap().data();
    let want = [1.0, 0.0, 0.5, 0.5, 1.0, 1.0];
    for (a, b) in out.iter().zip(want) {
        assert!((a - b).abs() < 1e-15, "{out:?}");
    }
}

#[test]
fn one_head_with_identity_output_equals_attention_head() {
    let config = ModelConfig {
        heads: 1,
        ..ModelConfig::tiny()
    };
    let mut w = ModelWeights::init(&config, 5).unwrap();
    let layer = w.layout.layers[0];
    w.params[layer.o.w] = Tensor::eye(config.d_model);
    for b in [layer.q.b, layer.k.b, layer.v.b, layer.o.b] {
        w.params[b] = Tensor::zeros(&[config.d_model]);
    }
    let tape = Tape::new();
    let vars = ModelVars::constants(&tape, &w);
    let x = tape.constant(&Tensor::randn(&[5, config.d_model], 1.0, &mut rng(1)));
    let multi = mhsa(&config, &vars, &layer, x, 1, 5).unwrap().data();
    let single = attention_head(
        x,
        vars.vars[layer.q.w],
        vars.vars[layer.k.w],
        vars.vars[layer.v.w],
    )
    .unwrap()
    .data();
    for (a, b) in multi.iter().zip(&single) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn mhsa_shape_and_gradient() {
    let config = ModelConfig::tiny();
    let w = ModelWeights::init(&config, 2).unwrap();
    let layer = w.layout.layers[0];
    let x = Tensor::randn(&[10, 8], 1.0, &mut rng(3)).with_requires_grad(true);
    let mut inputs = vec![x];
    let ids = [
        layer.q.w, layer.q.b, layer.k.w, layer.k.b, layer.v.w, layer.v.b, layer.o.w, layer.o.b,
    ];
    inputs.extend(ids.iter().map(|&i| {
        let mut p = w.params[i].clone();
        // Larger weights than the init so attention is far from uniform.
        p.data_mut().iter_mut().for_each(|v| *v *= 20.0);
        p
    }));
    let err = gradcheck(&inputs, |tape, v| {
        let mut vars = ModelVars::constants(tape, &w);
        for (k, &i) in ids.iter().enumerate() {
            vars.vars[i] = v[k + 1];
        }
        let y = mhsa(&config, &vars, &layer, v[0], 2, 5).unwrap();
        assert_eq!(y.shape(), vec![10, 8]);
        weighted_sum(tape, y, 4)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn zero_layer_weights_pass_input_through() {
    let config = ModelConfig::tiny();
    let mut w = ModelWeights::init(&config, 2).unwrap();
    let layer = w.layout.layers[0];
    for l in [layer.q, layer.k, layer.v, layer.o, layer.ffn1, layer.ffn2] {
        w.params[l.w] = Tensor::zeros(w.params[l.w].shape());
        w.params[l.b] = Tensor::zeros(w.params[l.b].shape());
    }
    let tape = Tape::new();
    let vars = ModelVars::constants(&tape, &w);
    let x = tape.constant(&Tensor::randn(&[5, 8], 1.0, &mut rng(9)));
    let y = decoder_layer(&config, &vars, &layer, x, 1, 5).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn decoder_layer_gradient() {
    let config = ModelConfig::tiny();
    let w = ModelWeights::init(&config, 4).unwrap();
    let layer = w.layout.layers[1];
    let mut inputs = vec![Tensor::randn(&[5, 8], 1.0, &mut rng(5)).with_requires_grad(true)];
    inputs.extend(w.params.iter().cloned());
    let err = gradcheck(&inputs, |tape, v| {
        let vars = ModelVars {
            vars: v[1..].to_vec(),
        };
        let y = decoder_layer(&config, &vars, &layer, v[0], 1, 5).unwrap();
        weighted_sum(tape, y, 6)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn full_model_gradient() {
    let config = ModelConfig::tiny();
    let w = ModelWeights::init(&config, 6).unwrap();
    let mut r = rng(7);
    let input = random_input(&mut r, 3);
    let targets = [1usize, 2, 0];
    let err = gradcheck(&w.params, |tape, v| {
        let vars = ModelVars { vars: v.to_vec() };
        let logits = forward(tape, &w, &vars, &input).unwrap();
        logits
            .cross_entropy(&targets, usize::MAX)
            .unwrap()
            .add(&weighted_sum(tape, logits, 8))
            .unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn frozen_projection_receives_no_gradient() {
    let w = ModelWeights::init(&ModelConfig::tiny(), 1).unwrap();
    let tape = Tape::new();
    let vars = ModelVars::leaves(&tape, &w);
    let input = random_input(&mut rng(2), 2);
    let loss = forward(&tape, &w, &vars, &input).unwrap().sum();
    let grads = tape.backward(loss).unwrap();
    assert!(vars.vars.iter().all(|v| grads.get(*v).is_some()));
    assert_eq!(vars.vars.len(), w.params.len());
}

#[test]
fn embeddings_and_assembly() {
    let w = ModelWeights::init(&ModelConfig::tiny(), 3).unwrap();
    let zero = encode_observation(&w, &Observation::zeros()).unwrap();
    let tape = Tape::new();
    let vars = ModelVars::constants(&tape, &w);
    // Zero input: the MLP reduces to its bias path.
    let b1 = tape.constant(&w.params[w.layout.enc1.b]);
    let h = b1.reshape(&[1, 8]).unwrap().gelu();
    let want = h
        .matmul(&vars.vars[w.layout.enc2.w])
        .unwrap()
        .add_bias(&vars.vars[w.layout.enc2.b])
        .unwrap();
    assert_eq!(zero, want.data());
    let o = random_obs(&mut rng(1));
    assert_eq!(
        encode_observation(&w, &o).unwrap(),
        encode_observation(&w, &o).unwrap()
    );

    let shifted = shift_actions(&[1, 1, 3], 3);
    assert_eq!(shifted, vec![SOS_ID, 1, 1]);
    let e = embed_actions(&w, &vars, &shifted).unwrap().data();
    let table = w.params[w.layout.action_embedding].data();
    assert_eq!(&e[..8], &table[SOS_ID * 8..SOS_ID * 8 + 8]);
    assert_eq!(&e[8..16], &e[16..24]);
    assert!(embed_actions(&w, &vars, &[5]).is_err());

    // Goal gets no position; both tokens of a step share one.
    let d = 8;
    let goal = tape.constant(&Tensor::zeros(&[1, d]));
    let obs = tape.constant(&Tensor::zeros(&[2, d]));
    let act = tape.constant(&Tensor::zeros(&[2, d]));
    let pos = vars.vars[w.layout.position_embedding];
    let seq = assemble_sequence(&tape, pos, goal, obs, act, 1, 2)
        .unwrap()
        .data();
    let p = w.params[w.layout.position_embedding].data();
    assert_eq!(&seq[..d], &[0.0; 8]);
    assert_eq!(&seq[d..2 * d], &p[..d]);
    assert_eq!(&seq[2 * d..3 * d], &p[..d]);
    assert_eq!(&seq[3 * d..4 * d], &p[d..2 * d]);
    let long = tape.constant(&Tensor::zeros(&[4, d]));
    assert!(matches!(
        assemble_sequence(&tape, pos, goal, long, long, 1, 4),
        Err(Error::ContextOverflow { got: 4, max: 3 })
    ));
}

#[test]
fn shape_law_and_overflow() {
    let config = ModelConfig {
        context: 8,
        ..ModelConfig::tiny()
    };
    let w = ModelWeights::init(&config, 1).unwrap();
    let mut r = rng(4);
    for steps in [1, 5, 8] {
        let logits = predict(&w, &random_input(&mut r, steps)).unwrap();
        assert_eq!(logits.len(), steps);
        assert!(logits.iter().all(|row| row.len() == config.num_actions));
    }
    assert!(matches!(
        predict(&w, &random_input(&mut r, 9)),
        Err(Error::ContextOverflow { got: 9, max: 8 })
    ));
}

/// Logits at step `t` must not move when anything after obs(t) changes.
fn assert_causal(w: &ModelWeights, seed: u64) {
    let mut r = rng(seed);
    let steps = w.config.context;
    let base = random_input(&mut r, steps);
    let before = predict(w, &base).unwrap();
    let t = r.random_range(0..steps);
    let mut changed = base.clone();
    let l = Observation::LEN;
    let other = random_input(&mut r, steps);
    changed.observations[(t + 1) * l..].copy_from_slice(&other.observations[(t + 1) * l..]);
    for s in t.saturating_sub(1)..steps {
        changed.actions[s] = (base.actions[s] + 1 + r.random_range(0..3)) % 4;
    }
    let after = predict(w, &changed).unwrap();
    for s in 0..=t {
        let same = before[s]
            .iter()
            .zip(&after[s])
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "step {s} moved after perturbing beyond obs({t})");
    }
    if t + 1 < steps {
        assert_ne!(before[steps - 1], after[steps - 1]);
    }
}

#[test]
fn causality_on_small_config() {
    let w = ModelWeights::init(&ModelConfig::small(), 11).unwrap();
    for seed in 0..20 {
        assert_causal(&w, seed);
    }
}

#[test]
fn goal_changes_first_step_logits() {
    let w = ModelWeights::init(&ModelConfig::small(), 2).unwrap();
    let mut r = rng(3);
    let a = random_input(&mut r, 1);
    let mut b = a.clone();
    b.goals = random_input(&mut r, 1).goals;
    let (la, lb) = (predict(&w, &a).unwrap(), predict(&w, &b).unwrap());
    let diff = la[0]
        .iter()
        .zip(&lb[0])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.0);
}

#[test]
fn forward_is_deterministic() {
    let w = ModelWeights::init(&ModelConfig::small(), 2).unwrap();
    let input = random_input(&mut rng(1), 8);
    let a = predict(&w, &input).unwrap();
    let b = predict(&w, &input).unwrap();
    assert!(a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn parameter_count_matches_closed_form() {
    for config in [
        ModelConfig::tiny(),
        ModelConfig::small(),
        ModelConfig {
            full_width_heads: true,
            ..ModelConfig::small()
        },
    ] {
        let (d, f, h, a, t) = (
            config.d_model,
            config.obs_feature_dim,
            config.mlp_hidden,
            config.num_actions,
            config.context,
        );
        let w_att = config.heads
            * if config.full_width_heads {
                d
            } else {
                d / config.heads
            };
        let per_layer = 3 * (d * w_att + w_att)
            + (w_att * d + d)
            + 2 * 2 * d
            + (d * config.d_ffn + config.d_ffn)
            + (config.d_ffn * d + d);
        let want = (f * h + h)
            + (h * d + d)
            + a * d
            + t * d
            + config.layers * per_layer
            + 2 * d
            + (d * d + d)
            + (d * a + a);
        assert_eq!(
            ModelWeights::init(&config, 0).unwrap().trainable_count(),
            want
        );
    }
}

#[test]
fn top_k_stays_in_top_two_and_splits_ties() {
    let mut r = rng(12);
    let logits = [0.5, 2.0, -1.0, 1.5, 9.0];
    for _ in 0..10_000 {
        let a = sample_action(&logits, Sampling::TopK(2), &mut r);
        assert!(a == 1 || a == 3);
    }
    let tied = [3.0, 0.0, 3.0, -2.0, 0.0];
    let first = (0..10_000)
        .filter(|_| sample_action(&tied, Sampling::TopK(2), &mut r) == 0)
        .count();
    assert!((first as f64 / 10_000.0 - 0.5).abs() < 0.03, "{first}");
}

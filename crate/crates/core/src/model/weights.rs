use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation for Transformer weights and embedding tables.
const INIT_STD: f64 = 0.02;

/// Parameter indices of an affine map `x·w + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerIdx {
    pub ln1: NormIdx,
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
    pub ln2: NormIdx,
    pub ffn1: LinearIdx,
    pub ffn2: LinearIdx,
}

/// Where each structural parameter lives in [`ModelWeights::params`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub enc1: LinearIdx,
    pub enc2: LinearIdx,
    pub action_embedding: usize,
    pub position_embedding: usize,
    pub layers: Vec<LayerIdx>,
    pub final_ln: NormIdx,
    pub head1: LinearIdx,
    pub head2: LinearIdx,
}

/// Frozen projection plus the trainable parameters in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub frozen_projection: Tensor,
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
    pub layout: Layout,
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.params.push(t.with_requires_grad(true));
        self.names.push(name);
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize, std: f64) -> LinearIdx {
        let w = Tensor::randn(&[inp, out], std, self.rng);
        LinearIdx {
            w: self.push(format!("{name}.weight"), w),
            b: self.push(format!("{name}.bias"), Tensor::zeros(&[out])),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            bias: self.push(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn table(&mut self, name: &str, rows: usize, d: usize) -> usize {
        let t = Tensor::randn(&[rows, d], INIT_STD, self.rng);
        self.push(name.into(), t)
    }
}

impl ModelWeights {
    /// Fresh weights. The frozen projection depends only on
    /// `config.projection_seed`; trainable tensors on `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let frozen_projection = frozen_projection(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            rng: &mut rng,
            params: Vec::new(),
            names: Vec::new(),
        };
        let (d, f, h) = (config.d_model, config.obs_feature_dim, config.mlp_hidden);
        let width = config.heads * config.head_dim();
        let fan_in = |n: usize| 1.0 / (n as f64).sqrt();

        let enc1 = b.linear("encoder.0", f, h, fan_in(f));
        let enc2 = b.linear("encoder.1", h, d, fan_in(h));
        let action_embedding = b.table("action_embedding", config.num_actions, d);
        let position_embedding = b.table("position_embedding", config.context, d);
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("layers.{l}");
                LayerIdx {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    q: b.linear(&format!("{p}.attn.q"), d, width, INIT_STD),
                    k: b.linear(&format!("{p}.attn.k"), d, width, INIT_STD),
                    v: b.linear(&format!("{p}.attn.v"), d, width, INIT_STD),
                    o: b.linear(&format!("{p}.attn.o"), width, d, INIT_STD),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ffn1: b.linear(&format!("{p}.ffn.0"), d, config.d_ffn, INIT_STD),
                    ffn2: b.linear(&format!("{p}.ffn.1"), config.d_ffn, d, INIT_STD),
                }
            })
            .collect();
        let final_ln = b.norm("final_ln", d);
        let head1 = b.linear("head.0", d, d, fan_in(d));
        let head2 = b.linear("head.1", d, config.num_actions, fan_in(d));
        let (params, names) = (b.params, b.names);
        Ok(ModelWeights {
            config: config.clone(),
            frozen_projection,
            params,
            names,
            layout: Layout {
                enc1,
                enc2,
                action_embedding,
                position_embedding,
                layers,
                final_ln,
                head1,
                head2,
            },
        })
    }

    /// Rebuilds weights from named tensors, checking names and shapes
    /// against a fresh layout for `config`.
    pub fn from_parts(
        config: &ModelConfig,
        frozen_projection: Tensor,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let mut w = Self::init_shapes(config)?;
        if frozen_projection.shape() != w.frozen_projection.shape() {
            return Err(Error::format(
                "checkpoint",
                "frozen projection shape mismatch",
            ));
        }
        if named.len() != w.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors, expected {}", named.len(), w.params.len()),
            ));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != w.names[i] || t.shape() != w.params[i].shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor {i} is {name} {:?}, expected {} {:?}",
                        t.shape(),
                        w.names[i],
                        w.params[i].shape()
                    ),
                ));
            }
            w.params[i] = t.with_requires_grad(true);
        }
        w.frozen_projection = frozen_projection.with_requires_grad(false);
        Ok(w)
    }

    /// Layout and zero-filled tensors, without drawing random numbers.
    fn init_shapes(config: &ModelConfig) -> Result<Self> {
        let mut small = config.clone();
        small.projection_seed = 0;
        // Initializing is cheap relative to loading, and guarantees the
        // same layout code path.
        let mut w = Self::init(&small, 0)?;
        w.frozen_projection = Tensor::zeros(w.frozen_projection.shape());
        w.config = config.clone();
        Ok(w)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen_projection.numel()
    }

    /// SHA-256 over the frozen projection's little-endian bytes.
    pub fn frozen_checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.frozen_projection.data() {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }
}

/// Seeded Gaussian map from the flattened observation to the feature
/// width, scaled to preserve the input norm on average.
pub fn frozen_projection(config: &ModelConfig) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(config.projection_seed ^ 0x5EED_F00D);
    let inp = Observation::LEN;
    Tensor::randn(
        &[inp, config.obs_feature_dim],
        1.0 / (inp as f64).sqrt(),
        &mut rng,
    )
    .with_requires_grad(false)
}

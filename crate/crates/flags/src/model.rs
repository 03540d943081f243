//! Query encoder, momentum key encoder, the four projection heads, and the
//! momentum update rule.
//!
//! The backbone is a small relu MLP. Key-side parameters never receive
//! gradients; they only move through `momentum_update`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlagsError, Result};
use crate::numeric::{Graph, NodeId, Tensor, NORM_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub feature_dim: usize,
    pub head_hidden_dim: usize,
    pub embed_dim: usize,
    pub momentum_m: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 128,
            hidden_dim: 64,
            num_hidden_layers: 2,
            feature_dim: 32,
            head_hidden_dim: 32,
            embed_dim: 16,
            momentum_m: 0.999,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_hidden_layers", self.num_hidden_layers),
            ("feature_dim", self.feature_dim),
            ("head_hidden_dim", self.head_hidden_dim),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(FlagsError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.momentum_m) {
            return Err(FlagsError::Config(format!(
                "momentum_m {} outside [0, 1]",
                self.momentum_m
            )));
        }
        Ok(())
    }
}

/// One dense layer: weight is [out x in], bias is [out].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Tensor {
            shape: vec![out_dim, in_dim],
            values: (0..out_dim * in_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        };
        let bias = Tensor::vector((0..out_dim).map(|_| rng.random_range(-bound..bound)).collect());
        Linear { weight, bias }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    /// Plain forward without gradient recording.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (m, k) = (self.out_dim(), self.in_dim());
        (0..m)
            .map(|i| {
                self.bias.values[i]
                    + self.weight.values[i * k..(i + 1) * k]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// MLP backbone: `num_hidden_layers` relu layers then a linear projection
/// to `feature_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Linear>,
}

impl EncoderParams {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let mut layers = Vec::new();
        let mut in_dim = cfg.input_dim;
        for _ in 0..cfg.num_hidden_layers {
            layers.push(Linear::init(rng, cfg.hidden_dim, in_dim));
            in_dim = cfg.hidden_dim;
        }
        layers.push(Linear::init(rng, cfg.feature_dim, in_dim));
        EncoderParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("encoder has layers").out_dim()
    }
}

/// 2-layer MLP head: feature_dim -> head_hidden_dim (relu) -> embed_dim.
/// `project` l2-normalizes the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub layers: [Linear; 2],
}

impl ProjectionHead {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        ProjectionHead {
            layers: [
                Linear::init(rng, cfg.head_hidden_dim, cfg.feature_dim),
                Linear::init(rng, cfg.embed_dim, cfg.head_hidden_dim),
            ],
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[1].out_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub g_q: ProjectionHead,
    pub l_q: ProjectionHead,
    pub g_k: ProjectionHead,
    pub l_k: ProjectionHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub query_encoder: EncoderParams,
    pub key_encoder: EncoderParams,
    pub heads: Heads,
    pub momentum_m: f64,
}

/// Deterministic init. The key encoder and key heads start as exact copies
/// of their query counterparts.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query_encoder = EncoderParams::init(&mut rng, config);
    let g_q = ProjectionHead::init(&mut rng, config);
    let l_q = ProjectionHead::init(&mut rng, config);
    Ok(ModelState {
        key_encoder: query_encoder.clone(),
        heads: Heads {
            g_k: g_q.clone(),
            l_k: l_q.clone(),
            g_q,
            l_q,
        },
        query_encoder,
        momentum_m: config.momentum_m,
        config: config.clone(),
    })
}

/// Encoder forward without gradient recording (key side, feature tables,
/// evaluation).
pub fn encode(params: &EncoderParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return Err(FlagsError::Dimension {
            expected: format!("input dim {}", params.input_dim()),
            got: format!("{}", x.len()),
        });
    }
    let last = params.layers.len() - 1;
    let mut h = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        h = layer.apply(&h);
        if i < last {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(h)
}

/// Head forward + l2 normalization, no gradient recording.
pub fn project(head: &ProjectionHead, feature: &[f64]) -> Result<Vec<f64>> {
    let mut h = head.layers[0].apply(feature);
    h.iter_mut().for_each(|v| *v = v.max(0.0));
    let out = head.layers[1].apply(&h);
    crate::numeric::l2_normalize_values(&out, NORM_EPSILON)
}

/// Encoder parameters staged as graph leaves, for the gradient-carrying
/// query path.
pub struct EncoderNodes {
    pub layers: Vec<(NodeId, NodeId)>,
}

pub struct HeadNodes {
    pub layers: [(NodeId, NodeId); 2],
}

pub fn stage_encoder(g: &mut Graph, params: &EncoderParams) -> EncoderNodes {
    EncoderNodes {
        layers: params
            .layers
            .iter()
            .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
            .collect(),
    }
}

pub fn stage_head(g: &mut Graph, head: &ProjectionHead) -> HeadNodes {
    let l0 = (g.leaf(head.layers[0].weight.clone()), g.leaf(head.layers[0].bias.clone()));
    let l1 = (g.leaf(head.layers[1].weight.clone()), g.leaf(head.layers[1].bias.clone()));
    HeadNodes { layers: [l0, l1] }
}

pub fn encode_on_graph(g: &mut Graph, enc: &EncoderNodes, x: NodeId) -> Result<NodeId> {
    let last = enc.layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in enc.layers.iter().enumerate() {
        let lin = g.matvec(w, h)?;
        h = g.add(lin, b)?;
        if i < last {
            h = g.relu(h);
        }
    }
    Ok(h)
}

pub fn project_on_graph(g: &mut Graph, head: &HeadNodes, feature: NodeId) -> Result<NodeId> {
    let (w0, b0) = head.layers[0];
    let lin0 = g.matvec(w0, feature)?;
    let added0 = g.add(lin0, b0)?;
    let h = g.relu(added0);
    let (w1, b1) = head.layers[1];
    let lin1 = g.matvec(w1, h)?;
    let out = g.add(lin1, b1)?;
    g.l2_normalize(out, NORM_EPSILON)
}

fn mix_tensor(key: &mut Tensor, query: &Tensor, m: f64) {
    for (k, q) in key.values.iter_mut().zip(&query.values) {
        *k = m * *k + (1.0 - m) * q;
    }
}

fn mix_linear(key: &mut Linear, query: &Linear, m: f64) {
    mix_tensor(&mut key.weight, &query.weight, m);
    mix_tensor(&mut key.bias, &query.bias, m);
}

/// theta_k <- m * theta_k + (1 - m) * theta_q for the key encoder and both
/// key heads. The query side is untouched.
pub fn momentum_update(state: &mut ModelState) -> Result<()> {
    let m = state.momentum_m;
    if !(0.0..=1.0).contains(&m) {
        return Err(FlagsError::Config(format!("momentum_m {m} outside [0, 1]")));
    }
    for (k, q) in state
        .key_encoder
        .layers
        .iter_mut()
        .zip(&state.query_encoder.layers)
    {
        mix_linear(k, q, m);
    }
    for (k, q) in state.heads.g_k.layers.iter_mut().zip(&state.heads.g_q.layers) {
        mix_linear(k, q, m);
    }
    for (k, q) in state.heads.l_k.layers.iter_mut().zip(&state.heads.l_q.layers) {
        mix_linear(k, q, m);
    }
    Ok(())
}

/// Flat list of all query-side parameter tensors, in a fixed order shared
/// with the optimizer's velocity buffers.
pub fn query_params_mut(state: &mut ModelState) -> Vec<&mut Tensor> {
    let mut out = Vec::new();
    for l in state.query_encoder.layers.iter_mut() {
        out.push(&mut l.weight);
        out.push(&mut l.bias);
    }
    for l in state.heads.g_q.layers.iter_mut() {
        out.push(&mut l.weight);
        out.push(&mut l.bias);
    }
    for l in state.heads.l_q.layers.iter_mut() {
        out.push(&mut l.weight);
        out.push(&mut l.bias);
    }
    out
}

pub fn query_params(state: &ModelState) -> Vec<&Tensor> {
    let mut out = Vec::new();
    for l in &state.query_encoder.layers {
        out.push(&l.weight);
        out.push(&l.bias);
    }
    for l in &state.heads.g_q.layers {
        out.push(&l.weight);
        out.push(&l.bias);
    }
    for l in &state.heads.l_q.layers {
        out.push(&l.weight);
        out.push(&l.bias);
    }
    out
}

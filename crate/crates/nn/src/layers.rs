//! Transformer encoder building blocks recorded onto a [`Graph`].

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::Matrix;

const LN_EPS: f64 = 1e-5;

fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_normal(
            format!("{name}.weight"),
            fan_in,
            fan_out,
            xavier_std(fan_in, fan_out),
            rng,
        );
        let bias = store.add_zeros(format!("{name}.bias"), 1, fan_out);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add_filled(format!("{name}.gamma"), 1, dim, 1.0),
            beta: store.add_zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Attention probabilities captured during a forward pass, indexed
/// `[layer][head]`.
pub type AttentionTrace = Vec<Vec<Matrix>>;

/// Multi-head self-attention whose pre-softmax logits may carry an additive
/// bias. The same bias is added to every head after the `1/sqrt(d_head)`
/// scaling.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
            head_dim: dim / heads,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        bias: Option<&Matrix>,
        mut trace: Option<&mut Vec<Matrix>>,
    ) -> Var {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * self.head_dim;
            let qh = g.slice_cols(q, start, self.head_dim);
            let kh = g.slice_cols(k, start, self.head_dim);
            let vh = g.slice_cols(v, start, self.head_dim);
            let logits = g.matmul_nt(qh, kh);
            let mut logits = g.scale(logits, scale);
            if let Some(a) = bias {
                logits = g.add_const(logits, a);
            }
            let probs = g.softmax_rows(logits);
            if let Some(t) = trace.as_deref_mut() {
                t.push(g.value(probs).clone());
            }
            outs.push(g.matmul(probs, vh));
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        self.output.forward(g, joined)
    }
}

/// Shape of a transformer encoder stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

/// Post-norm encoder layer: `LN(x + MHA(x))` then `LN(h + FFN(h))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    attention: MultiHeadAttention,
    attn_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &StackConfig, rng: &mut R) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.dim, cfg.heads, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), cfg.dim),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), cfg.dim, cfg.ffn_dim, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), cfg.ffn_dim, cfg.dim, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.dim),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        bias: Option<&Matrix>,
        trace: Option<&mut Vec<Matrix>>,
    ) -> Var {
        let attended = self.attention.forward(g, x, bias, trace);
        let h = g.add(x, attended);
        let h = self.attn_norm.forward(g, h);
        let ff = self.ffn_in.forward(g, h);
        let ff = g.relu(ff);
        let ff = self.ffn_out.forward(g, ff);
        let out = g.add(h, ff);
        self.ffn_norm.forward(g, out)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &StackConfig, rng: &mut R) -> Self {
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), cfg, rng))
            .collect();
        Self { layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs every layer, adding `bias` to the attention logits of each one.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        bias: Option<&Matrix>,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Var {
        let mut h = x;
        for layer in &self.layers {
            let layer_trace = trace.as_deref_mut().map(|t| {
                t.push(Vec::new());
                t.last_mut().unwrap()
            });
            h = layer.forward(g, h, bias, layer_trace);
        }
        h
    }
}

/// Fixed sinusoidal position encodings, `len × dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn encoder_preserves_shape_and_traces_every_head() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cfg = StackConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            ffn_dim: 16,
        };
        let enc = TransformerEncoder::new(&mut store, "enc", &cfg, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.constant(Array2::from_shape_fn((5, 8), |(i, j)| (i * j) as f64 * 0.1));
        let mut trace = AttentionTrace::new();
        let y = enc.forward(&mut g, x, None, Some(&mut trace));
        assert_eq!(g.shape(y), (5, 8));
        assert_eq!(trace.len(), 2);
        for layer in &trace {
            assert_eq!(layer.len(), 2);
            for probs in layer {
                for row in probs.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sinusoidal_first_row() {
        let p = sinusoidal_positions(3, 4);
        assert_eq!(p[[0, 0]], 0.0);
        assert_eq!(p[[0, 1]], 1.0);
        assert!((p[[1, 0]] - 1f64.sin()).abs() < 1e-15);
    }
}

//! Building blocks shared by the tagger and the rewriter demonstrator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Init, Mask, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: store.add_init(format!("{name}.weight"), input, output, Init::Xavier, rng),
            bias: store.add_init(format!("{name}.bias"), 1, output, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        LayerNorm {
            gamma: store.add_init(format!("{name}.gamma"), 1, dim, Init::Ones, rng),
            beta: store.add_init(format!("{name}.beta"), 1, dim, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Intermediate values of one multi-head attention sublayer.
pub struct AttentionOutput {
    /// Per-head attention weights, each N×N.
    pub weights: Vec<Var>,
    /// Concatenated per-head `softmax(QKᵀ/√d_k)·V`, before the output map.
    pub mixed: Var,
    /// `mixed` after the output map.
    pub output: Var,
}

/// Multi-head scaled dot-product self-attention followed by a position-wise
/// feed-forward block; post-norm residuals around both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerLayer {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

impl TransformerLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        TransformerLayer {
            heads,
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), dim, rng),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), dim, ffn_dim, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), ffn_dim, dim, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim, rng),
        }
    }

    pub fn attention(&self, g: &mut Graph<'_>, x: Var, mask: Option<&Mask>) -> AttentionOutput {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let dim = g.value(x).ncols();
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut weights = Vec::with_capacity(self.heads);
        let mut per_head = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = g.slice_cols(q, lo, hi);
            let kh = g.slice_cols(k, lo, hi);
            let vh = g.slice_cols(v, lo, hi);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let p = g.softmax(scores, mask);
            per_head.push(g.matmul(p, vh));
            weights.push(p);
        }
        let mixed = if per_head.len() == 1 {
            per_head[0]
        } else {
            g.concat_cols(&per_head)
        };
        let output = self.output.forward(g, mixed);
        AttentionOutput {
            weights,
            mixed,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, mask: Option<&Mask>) -> (Var, AttentionOutput) {
        let attn = self.attention(g, x, mask);
        let h = g.add(x, attn.output);
        let h = self.attn_norm.forward(g, h);
        let f = self.ffn_in.forward(g, h);
        let f = g.gelu(f);
        let f = self.ffn_out.forward(g, f);
        let out = g.add(h, f);
        (self.ffn_norm.forward(g, out), attn)
    }
}

/// One hidden layer, GELU activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, output, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.gelu(h);
        self.out.forward(g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(dim: usize, heads: usize) -> (ParamStore, TransformerLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let l = TransformerLayer::new(&mut store, "l", dim, heads, 8, &mut rng);
        (store, l)
    }

    #[test]
    fn single_position_attends_to_itself() {
        let (store, l) = layer(4, 2);
        let mut g = Graph::new(&store);
        let x = g.input(array![[0.3, -1.0, 2.0, 0.5]]);
        let attn = l.attention(&mut g, x, None);
        let v = l.value.forward(&mut g, x);
        assert_eq!(g.value(attn.mixed), g.value(v));
        let expected = l.output.forward(&mut g, v);
        assert_eq!(g.value(attn.output), g.value(expected));
    }

    #[test]
    fn identical_keys_average_values() {
        let (mut store, l) = layer(4, 2);
        // zero key projection: every key is the bias, so logits are equal
        store.get_mut(l.key.weight).fill(0.0);
        let mut g = Graph::new(&store);
        let x = g.input(array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.5, 0.0, 2.0]]);
        let attn = l.attention(&mut g, x, None);
        let v = l.value.forward(&mut g, x);
        let vals = g.value(v).clone();
        let mean = (&vals.row(0) + &vals.row(1)) / 2.0;
        for r in 0..2 {
            for w in &attn.weights {
                assert!((g.value(*w)[[r, 0]] - 0.5).abs() < 1e-12);
            }
            for c in 0..4 {
                assert!((g.value(attn.mixed)[[r, c]] - mean[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let (store, l) = layer(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new(&store);
        let x = g.input(Array2::from_shape_simple_fn((7, 8), || rng.random_range(-3.0..3.0)));
        let (_, attn) = l.forward(&mut g, x, None);
        for w in attn.weights {
            for row in g.value(w).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }
}

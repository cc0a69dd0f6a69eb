//! A compact masked-attention generator conditioned on linearized PA triples
//! and dialogue context. Word, segment and position embeddings are summed;
//! the attention stack is the tagger's [`TransformerLayer`] with the
//! linearization mask injected into every softmax.

use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{SemanticRole, SpeakerId};
use crate::linearize::{linearize, ContextUtterance, LinearizedInput, MaskOptions, PATriple, BOS, EOS};
use crate::model::graph::{softmax_rows, Gradients, Graph, Init, ParamId, ParamStore, Var};
use crate::model::layers::{LayerNorm, Linear, TransformerLayer};
use crate::model::optim::Adam;
use crate::model::{argmax_rows, ModelError, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriterConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub mask: MaskOptions,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RewriterConfig {
    fn default() -> Self {
        RewriterConfig {
            dim: 32,
            heads: 2,
            layers: 2,
            ffn_dim: 64,
            max_positions: 64,
            mask: MaskOptions::default(),
            epochs: 300,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteItem {
    pub triples: Vec<PATriple>,
    pub context: Vec<ContextUtterance>,
    pub response_speaker: SpeakerId,
    pub target: Vec<String>,
}

impl RewriteItem {
    pub fn linearize(&self, options: &MaskOptions) -> Result<LinearizedInput, ModelError> {
        Ok(linearize(
            &self.triples,
            &self.context,
            Some(&self.target),
            options,
            self.response_speaker,
        )?)
    }
}

/// Every token of the items plus the special and role tokens.
pub fn rewriter_vocab(items: &[RewriteItem]) -> Vocab {
    let mut v = Vocab::build([BOS, EOS]);
    for r in SemanticRole::ALL {
        v.insert(r.as_str());
    }
    for item in items {
        for t in item.triples.iter().flat_map(|t| t.tokens()) {
            v.insert(&t);
        }
        for t in item.context.iter().flat_map(|u| &u.tokens).chain(&item.target) {
            v.insert(t);
        }
    }
    v
}

/// `−Σ_t log p_t(target_t)` over the given rows.
pub fn response_nll(distributions: &Array2<f64>, targets: &[usize]) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(t, &y)| -distributions[[t, y]].ln())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewriter {
    pub config: RewriterConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    word_embedding: ParamId,
    segment_embedding: ParamId,
    position_embedding: ParamId,
    norm: LayerNorm,
    layers: Vec<TransformerLayer>,
    output: Linear,
}

impl Rewriter {
    pub fn new(config: RewriterConfig, vocab: Vocab) -> Result<Self, ModelError> {
        if config.dim == 0 || config.heads == 0 || config.dim % config.heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "dim {} must be a positive multiple of heads {}",
                config.dim, config.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let word_embedding = store.add_init("rewriter.word", vocab.len(), config.dim, Init::Normal(1.0), &mut rng);
        let segment_embedding = store.add_init("rewriter.segment", 3, config.dim, Init::Normal(1.0), &mut rng);
        let position_embedding =
            store.add_init("rewriter.position", config.max_positions, config.dim, Init::Normal(1.0), &mut rng);
        let norm = LayerNorm::new(&mut store, "rewriter.norm", config.dim, &mut rng);
        let layers = (0..config.layers)
            .map(|l| {
                TransformerLayer::new(&mut store, &format!("rewriter.layer{l}"), config.dim, config.heads, config.ffn_dim, &mut rng)
            })
            .collect();
        let output = Linear::new(&mut store, "rewriter.output", config.dim, vocab.len(), &mut rng);
        Ok(Rewriter {
            config,
            vocab,
            params: store,
            word_embedding,
            segment_embedding,
            position_embedding,
            norm,
            layers,
            output,
        })
    }

    /// Next-token logits at every position, plus per-layer attention weights.
    pub fn graph_logits(&self, g: &mut Graph<'_>, input: &LinearizedInput) -> Result<(Var, Vec<Vec<Var>>), ModelError> {
        if let Some(&p) = input.positions.iter().max() {
            if p >= self.config.max_positions {
                return Err(ModelError::ShapeMismatch(format!(
                    "position {p} beyond table of {}",
                    self.config.max_positions
                )));
            }
        }
        let ids: Vec<usize> = input.tokens.iter().map(|t| self.vocab.id(t)).collect();
        let segs: Vec<usize> = input.segments.iter().map(|s| s.index()).collect();
        let words = g.param(self.word_embedding);
        let words = g.gather(words, &ids);
        let segments = g.param(self.segment_embedding);
        let segments = g.gather(segments, &segs);
        let positions = g.param(self.position_embedding);
        let positions = g.gather(positions, &input.positions);
        let h = g.add(words, segments);
        let h = g.add(h, positions);
        let mut h = self.norm.forward(g, h);
        let mask = Rc::new(input.mask.clone());
        let mut weights = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, attn) = layer.forward(g, h, Some(&mask));
            if !g.value(out).iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite { layer: l });
            }
            weights.push(attn.weights);
            h = out;
        }
        Ok((self.output.forward(g, h), weights))
    }

    /// Distributions predicted from each R position: BOS predicts the first
    /// response token, the last response token predicts [`EOS`].
    pub fn response_distributions(&self, input: &LinearizedInput) -> Result<Array2<f64>, ModelError> {
        let mut g = Graph::new(&self.params);
        let (logits, _) = self.graph_logits(&mut g, input)?;
        let start = input.response_start();
        let rows = g.value(logits).slice(ndarray::s![start.., ..]).to_owned();
        Ok(softmax_rows(&rows, None))
    }

    fn targets(&self, input: &LinearizedInput) -> Result<(usize, Vec<usize>), ModelError> {
        let start = input.response_start();
        if input.len() == start + 1 {
            return Err(ModelError::ShapeMismatch("response region is empty".into()));
        }
        let mut targets: Vec<usize> = input.tokens[start + 1..].iter().map(|t| self.vocab.id(t)).collect();
        targets.push(self.vocab.id(EOS));
        Ok((start, targets))
    }

    fn loss_graph(&self, g: &mut Graph<'_>, input: &LinearizedInput) -> Result<Var, ModelError> {
        let (start, targets) = self.targets(input)?;
        let (logits, _) = self.graph_logits(g, input)?;
        let mut all_targets = vec![0; start];
        all_targets.extend(targets);
        let mut weights = vec![0.0; start];
        weights.resize(input.len(), 1.0);
        Ok(g.cross_entropy(logits, &all_targets, &weights))
    }

    /// Summed NLL of the response tokens and the closing [`EOS`]. Z and C
    /// positions carry no loss.
    pub fn generation_loss(&self, input: &LinearizedInput) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params);
        let l = self.loss_graph(&mut g, input)?;
        Ok(g.scalar(l))
    }

    pub fn loss_and_gradients(&self, input: &LinearizedInput) -> Result<(f64, Gradients), ModelError> {
        let mut g = Graph::new(&self.params);
        let l = self.loss_graph(&mut g, input)?;
        Ok((g.scalar(l), g.backward(l)))
    }

    /// Argmax decoding until [`EOS`] or `max_len` tokens.
    pub fn generate_greedy(
        &self,
        triples: &[PATriple],
        context: &[ContextUtterance],
        response_speaker: SpeakerId,
        max_len: usize,
    ) -> Result<Vec<String>, ModelError> {
        let eos = self.vocab.id(EOS);
        let mut out: Vec<String> = Vec::new();
        while out.len() < max_len {
            let input = linearize(triples, context, Some(&out), &self.config.mask, response_speaker)?;
            let dist = self.response_distributions(&input)?;
            let last = dist.slice(ndarray::s![dist.nrows() - 1..dist.nrows(), ..]).to_owned();
            let next = argmax_rows(&last)[0];
            if next == eos {
                break;
            }
            out.push(self.vocab.token(next).to_string());
        }
        Ok(out)
    }
}

/// Fits a demonstrator to `items` with full-batch Adam.
pub fn train_rewriter(items: &[RewriteItem], config: &RewriterConfig) -> Result<(Rewriter, Vec<f64>), ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut model = Rewriter::new(config.clone(), rewriter_vocab(items))?;
    let inputs = items
        .iter()
        .map(|it| it.linearize(&config.mask))
        .collect::<Result<Vec<_>, _>>()?;
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_cafe);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut grads = Gradients::zeros_like(&model.params);
        let mut total = 0.0;
        for &i in &order {
            let (loss, g) = model.loss_and_gradients(&inputs[i])?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch, step: epoch });
            }
            total += loss;
            grads.accumulate(&g);
        }
        grads.scale(1.0 / inputs.len() as f64);
        adam.step(&mut model.params, &grads);
        let mean = total / inputs.len() as f64;
        log::debug!("rewriter epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok((model, history))
}

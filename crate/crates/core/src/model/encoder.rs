//! Utterance encoders: per-turn contextualization of the flattened dialogue.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Init, Mask, ParamId, ParamStore, Var};
use super::layers::{LayerNorm, TransformerLayer};
use super::vocab::Vocab;
use super::ModelError;
use crate::dialogue::FlatDialogue;

/// Produces one vector per flat item. Row `i` may only depend on the items
/// of the turn containing `i` (its marker included).
pub trait UtteranceEncoder {
    fn output_dim(&self) -> usize;

    fn max_utterance_len(&self) -> usize;

    fn encode(&self, g: &mut Graph<'_>, flat: &FlatDialogue) -> Result<Var, ModelError>;
}

/// Mask allowing attention only between items of the same turn.
pub fn turn_block_mask(flat: &FlatDialogue) -> Mask {
    let n = flat.len();
    Rc::new(Array2::from_shape_fn((n, n), |(i, j)| {
        flat.items[i].turn == flat.items[j].turn
    }))
}

/// Compact transformer encoder run independently over each `[marker, tokens..]`
/// segment, randomly initialized and trained jointly with the tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEncoder {
    pub vocab: Vocab,
    pub dim: usize,
    pub max_len: usize,
    word_embedding: ParamId,
    position_embedding: ParamId,
    embedding_norm: LayerNorm,
    layers: Vec<TransformerLayer>,
}

impl ReferenceEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        vocab: Vocab,
        dim: usize,
        layers: usize,
        heads: usize,
        ffn_dim: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Self {
        let word_embedding = store.add_init("encoder.word", vocab.len(), dim, Init::Normal(1.0), rng);
        // slot 0 is the marker, tokens follow
        let position_embedding =
            store.add_init("encoder.position", max_len + 1, dim, Init::Normal(1.0), rng);
        let embedding_norm = LayerNorm::new(store, "encoder.norm", dim, rng);
        let layers = (0..layers)
            .map(|l| TransformerLayer::new(store, &format!("encoder.layer{l}"), dim, heads, ffn_dim, rng))
            .collect();
        ReferenceEncoder {
            vocab,
            dim,
            max_len,
            word_embedding,
            position_embedding,
            embedding_norm,
            layers,
        }
    }
}

impl UtteranceEncoder for ReferenceEncoder {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn max_utterance_len(&self) -> usize {
        self.max_len
    }

    fn encode(&self, g: &mut Graph<'_>, flat: &FlatDialogue) -> Result<Var, ModelError> {
        for turn in 0..flat.turns() {
            let len = flat.turn_len(turn);
            if len > self.max_len {
                return Err(ModelError::UtteranceTooLong {
                    turn,
                    len,
                    max: self.max_len,
                });
            }
        }
        let word_ids: Vec<usize> = flat.items.iter().map(|it| self.vocab.id(&it.text)).collect();
        let pos_ids: Vec<usize> = flat.items.iter().map(|it| it.within_turn_pos).collect();
        let words = g.param(self.word_embedding);
        let words = g.gather(words, &word_ids);
        let positions = g.param(self.position_embedding);
        let positions = g.gather(positions, &pos_ids);
        let mut h = g.add(words, positions);
        h = self.embedding_norm.forward(g, h);
        let mask = turn_block_mask(flat);
        for layer in &self.layers {
            h = layer.forward(g, h, Some(&mask)).0;
        }
        Ok(h)
    }
}

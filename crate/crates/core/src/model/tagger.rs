//! The cross-turn argument tagger: utterance encoder, indicator embeddings,
//! dialogue-level self-attention stack and the two classifier heads.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{ReferenceEncoder, UtteranceEncoder};
use super::graph::{softmax_rows, Gradients, Graph, Init, ParamId, ParamStore, Var};
use super::layers::{Linear, Mlp, TransformerLayer};
use super::vocab::Vocab;
use super::ModelError;
use crate::dialogue::{flatten, DialogueSession, FlatDialogue, Frame, Span};
use crate::tags::{
    decode_mentions, decode_tags, encode_frame, encode_mentions, BioKind, MentionTagSequence, Tag, TagSequence, NUM_LABELS,
    NUM_MENTION_LABELS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ffn_dim: usize,
    pub max_utterance_len: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub predicate_ind_dim: usize,
    pub speaker_ind_dim: usize,
    pub turn_ind_dim: usize,
    pub turn_clip: usize,
    pub mlp_hidden: usize,
    pub span_loss_weight: f64,
    pub use_predicate_indicator: bool,
    pub use_speaker_indicator: bool,
    pub use_turn_indicator: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Full-scale settings: d = 1024, 8 heads, 4 layers, indicator widths
    /// 10/50/50.
    fn default() -> Self {
        ModelConfig {
            encoder_dim: 1024,
            encoder_layers: 2,
            encoder_heads: 8,
            encoder_ffn_dim: 4096,
            max_utterance_len: 256,
            attn_dim: 1024,
            heads: 8,
            layers: 4,
            ffn_dim: 4096,
            predicate_ind_dim: 10,
            speaker_ind_dim: 50,
            turn_ind_dim: 50,
            turn_clip: 10,
            mlp_hidden: 512,
            span_loss_weight: 1.0,
            use_predicate_indicator: true,
            use_speaker_indicator: true,
            use_turn_indicator: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A desk-scale configuration for tests and toy corpora.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder_dim: 16,
            encoder_layers: 1,
            encoder_heads: 2,
            encoder_ffn_dim: 32,
            max_utterance_len: 32,
            attn_dim: 16,
            heads: 2,
            layers: 1,
            ffn_dim: 32,
            predicate_ind_dim: 4,
            speaker_ind_dim: 4,
            turn_ind_dim: 4,
            turn_clip: 4,
            mlp_hidden: 16,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let dims = [
            ("encoder_dim", self.encoder_dim),
            ("encoder_heads", self.encoder_heads),
            ("encoder_ffn_dim", self.encoder_ffn_dim),
            ("max_utterance_len", self.max_utterance_len),
            ("attn_dim", self.attn_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("predicate_ind_dim", self.predicate_ind_dim),
            ("speaker_ind_dim", self.speaker_ind_dim),
            ("turn_ind_dim", self.turn_ind_dim),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.attn_dim % self.heads != 0 {
            return bad(format!("attn_dim {} not divisible by heads {}", self.attn_dim, self.heads));
        }
        if self.encoder_dim % self.encoder_heads != 0 {
            return bad(format!(
                "encoder_dim {} not divisible by encoder_heads {}",
                self.encoder_dim, self.encoder_heads
            ));
        }
        if self.turn_clip < 1 {
            return bad("turn_clip must be at least 1".into());
        }
        if !(self.span_loss_weight >= 0.0 && self.span_loss_weight.is_finite()) {
            return bad("span_loss_weight must be a non-negative number".into());
        }
        Ok(())
    }

    fn turn_table_size(&self) -> usize {
        2 * self.turn_clip + 1
    }
}

/// Table indices of the three indicator features, one entry per flat item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Indicators {
    pub predicate: Vec<usize>,
    pub speaker: Vec<usize>,
    /// Signed turn distance to the predicate, clipped to `±turn_clip`.
    pub turn_distance: Vec<i64>,
    /// `turn_distance + turn_clip`.
    pub turn: Vec<usize>,
}

pub fn build_indicators(
    flat: &FlatDialogue,
    predicate: &Span,
    config: &ModelConfig,
) -> Result<Indicators, ModelError> {
    let (start, end) = flat.flat_index(predicate)?;
    let clip = config.turn_clip as i64;
    let mut ind = Indicators {
        predicate: vec![0; flat.len()],
        speaker: Vec::with_capacity(flat.len()),
        turn_distance: Vec::with_capacity(flat.len()),
        turn: Vec::with_capacity(flat.len()),
    };
    ind.predicate[start..end].fill(1);
    for (i, item) in flat.items.iter().enumerate() {
        ind.speaker.push(item.speaker.index());
        let d = flat.turn_distance(predicate, i)?.clamp(-clip, clip);
        ind.turn_distance.push(d);
        ind.turn.push((d + clip) as usize);
    }
    Ok(ind)
}

/// One (session, predicate) instance with its gold labels.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub flat: FlatDialogue,
    pub predicate: Span,
    pub indicators: Indicators,
    pub gold_tags: TagSequence,
    pub gold_mentions: Option<MentionTagSequence>,
}

impl TrainingSample {
    pub fn new(
        flat: FlatDialogue,
        frame: &Frame,
        mentions: Option<&[Span]>,
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let indicators = build_indicators(&flat, &frame.predicate, config)?;
        let gold_tags = encode_frame(&flat, frame)?;
        let gold_mentions = mentions.map(|m| encode_mentions(&flat, m)).transpose()?;
        Ok(TrainingSample {
            flat,
            predicate: frame.predicate,
            indicators,
            gold_tags,
            gold_mentions,
        })
    }

    /// One sample per frame of `session`. Mentions are attached only when
    /// the session carries them.
    pub fn from_session(session: &DialogueSession, config: &ModelConfig) -> Result<Vec<Self>, ModelError> {
        let flat = flatten(session)?;
        session
            .frames
            .iter()
            .map(|f| TrainingSample::new(flat.clone(), f, session.mentions.as_deref(), config))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn gold_frame(&self) -> Frame {
        let arguments = decode_tags(&self.gold_tags, &self.flat)
            .expect("gold tags match the flat dialogue")
            .into_iter()
            .map(|(role, span)| crate::dialogue::Argument { role, span })
            .collect();
        Frame {
            predicate: self.predicate,
            arguments,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    /// N × 19, rows sum to one.
    pub label_distributions: Array2<f64>,
    pub tags: TagSequence,
    pub frame: Frame,
    /// Spans read off the mention head.
    pub mentions: Vec<Span>,
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// `(1/N) Σ_t [−log p(y_t) + w·(−log q(z_t))]` from explicit distributions.
pub fn sequence_loss(
    label_probs: &Array2<f64>,
    gold: &[usize],
    mentions: Option<(&Array2<f64>, &[usize])>,
    span_loss_weight: f64,
) -> f64 {
    let n = gold.len() as f64;
    let srl: f64 = gold
        .iter()
        .enumerate()
        .map(|(t, &y)| -label_probs[[t, y]].ln())
        .sum();
    let span: f64 = mentions
        .map(|(probs, z)| z.iter().enumerate().map(|(t, &k)| -probs[[t, k]].ln()).sum())
        .unwrap_or(0.0);
    (srl + span_loss_weight * span) / n
}

/// Head outputs of one forward pass, as graph nodes.
pub struct ForwardVars {
    pub encoded: Var,
    pub contextual: Var,
    pub label_logits: Var,
    pub mention_logits: Var,
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrlModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: ReferenceEncoder,
    predicate_table: Option<ParamId>,
    speaker_table: Option<ParamId>,
    turn_table: Option<ParamId>,
    projection: Linear,
    layers: Vec<TransformerLayer>,
    srl_head: Mlp,
    mention_head: Mlp,
}

impl CsrlModel {
    /// Random initialization from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = ReferenceEncoder::new(
            &mut store,
            vocab,
            c.encoder_dim,
            c.encoder_layers,
            c.encoder_heads,
            c.encoder_ffn_dim,
            c.max_utterance_len,
            &mut rng,
        );
        let mut input_dim = c.encoder_dim;
        let mut table = |on: bool, name: &str, rows: usize, dim: usize, store: &mut ParamStore| {
            on.then(|| {
                input_dim += dim;
                store.add_init(name, rows, dim, Init::Normal(1.0), &mut rng)
            })
        };
        let predicate_table = table(c.use_predicate_indicator, "indicator.predicate", 2, c.predicate_ind_dim, &mut store);
        let speaker_table = table(c.use_speaker_indicator, "indicator.speaker", 2, c.speaker_ind_dim, &mut store);
        let turn_table = table(c.use_turn_indicator, "indicator.turn", c.turn_table_size(), c.turn_ind_dim, &mut store);
        let projection = Linear::new(&mut store, "projection", input_dim, c.attn_dim, &mut rng);
        let layers = (0..c.layers)
            .map(|l| TransformerLayer::new(&mut store, &format!("dialogue.layer{l}"), c.attn_dim, c.heads, c.ffn_dim, &mut rng))
            .collect();
        let srl_head = Mlp::new(&mut store, "srl_head", c.attn_dim, c.mlp_hidden, NUM_LABELS, &mut rng);
        let mention_head = Mlp::new(&mut store, "mention_head", c.attn_dim, c.mlp_hidden, NUM_MENTION_LABELS, &mut rng);
        Ok(CsrlModel {
            config,
            params: store,
            encoder,
            predicate_table,
            speaker_table,
            turn_table,
            projection,
            layers,
            srl_head,
            mention_head,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.encoder.vocab
    }

    pub fn encoder(&self) -> &ReferenceEncoder {
        &self.encoder
    }

    /// Checks that the stored weights have the layout `config` implies.
    pub fn check_layout(&self) -> Result<(), ModelError> {
        let fresh = CsrlModel::new(self.config.clone(), self.vocab().clone())?;
        if fresh.params.same_layout(&self.params) && fresh.layers.len() == self.layers.len() {
            Ok(())
        } else {
            Err(ModelError::Checkpoint("parameter layout does not match config".into()))
        }
    }

    fn check_sample(&self, flat: &FlatDialogue, ind: &Indicators) -> Result<(), ModelError> {
        let n = flat.len();
        let lens = [ind.predicate.len(), ind.speaker.len(), ind.turn.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(ModelError::ShapeMismatch(format!(
                "indicator lengths {lens:?} for {n} items"
            )));
        }
        if ind.turn.iter().any(|&t| t >= self.config.turn_table_size()) {
            return Err(ModelError::ShapeMismatch("turn index beyond clip".into()));
        }
        Ok(())
    }

    pub fn graph_forward(
        &self,
        g: &mut Graph<'_>,
        flat: &FlatDialogue,
        ind: &Indicators,
    ) -> Result<ForwardVars, ModelError> {
        self.check_sample(flat, ind)?;
        let encoded = self.encoder.encode(g, flat)?;
        let mut parts = vec![encoded];
        for (table, ids) in [
            (self.predicate_table, &ind.predicate),
            (self.speaker_table, &ind.speaker),
            (self.turn_table, &ind.turn),
        ] {
            if let Some(t) = table {
                let tv = g.param(t);
                parts.push(g.gather(tv, ids));
            }
        }
        let joined = g.concat_cols(&parts);
        let mut h = self.projection.forward(g, joined);
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, attn) = layer.forward(g, h, None);
            if !g.value(out).iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite { layer: l });
            }
            attention.push(attn.weights);
            h = out;
        }
        let label_logits = self.srl_head.forward(g, h);
        let mention_logits = self.mention_head.forward(g, h);
        Ok(ForwardVars {
            encoded,
            contextual: h,
            label_logits,
            mention_logits,
            attention,
        })
    }

    /// Per-token encoder outputs (N × encoder_dim).
    pub fn encode_utterances(&self, session: &DialogueSession) -> Result<Array2<f64>, ModelError> {
        let flat = flatten(session)?;
        let mut g = Graph::new(&self.params);
        let v = self.encoder.encode(&mut g, &flat)?;
        Ok(g.value(v).clone())
    }

    /// Representations after the dialogue-level attention stack.
    pub fn contextual(&self, flat: &FlatDialogue, ind: &Indicators) -> Result<Array2<f64>, ModelError> {
        let mut g = Graph::new(&self.params);
        let fv = self.graph_forward(&mut g, flat, ind)?;
        Ok(g.value(fv.contextual).clone())
    }

    /// Label (N×19) and mention (N×3) distributions.
    pub fn forward(&self, sample: &TrainingSample) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        self.distributions(&sample.flat, &sample.indicators)
    }

    fn distributions(&self, flat: &FlatDialogue, ind: &Indicators) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        let mut g = Graph::new(&self.params);
        let fv = self.graph_forward(&mut g, flat, ind)?;
        Ok((
            softmax_rows(g.value(fv.label_logits), None),
            softmax_rows(g.value(fv.mention_logits), None),
        ))
    }

    fn loss_graph(&self, g: &mut Graph<'_>, sample: &TrainingSample) -> Result<Var, ModelError> {
        let fv = self.graph_forward(g, &sample.flat, &sample.indicators)?;
        let n = sample.len();
        let inv_n = vec![1.0 / n as f64; n];
        let srl = g.cross_entropy(fv.label_logits, &sample.gold_tags.indices(), &inv_n);
        let w = self.config.span_loss_weight;
        match &sample.gold_mentions {
            Some(m) if w > 0.0 => {
                let weights = vec![w / n as f64; n];
                let span = g.cross_entropy(fv.mention_logits, &m.indices(), &weights);
                Ok(g.sum(&[srl, span]))
            }
            _ => Ok(srl),
        }
    }

    pub fn loss(&self, sample: &TrainingSample) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params);
        let l = self.loss_graph(&mut g, sample)?;
        Ok(g.scalar(l))
    }

    pub fn loss_and_gradients(&self, sample: &TrainingSample) -> Result<(f64, Gradients), ModelError> {
        let mut g = Graph::new(&self.params);
        let l = self.loss_graph(&mut g, sample)?;
        Ok((g.scalar(l), g.backward(l)))
    }

    pub fn predict_flat(&self, flat: &FlatDialogue, predicate: &Span) -> Result<PredictionResult, ModelError> {
        let ind = build_indicators(flat, predicate, &self.config)?;
        let (label_distributions, mention_distributions) = self.distributions(flat, &ind)?;
        let tags = TagSequence {
            tags: argmax_rows(&label_distributions)
                .into_iter()
                .map(|i| Tag::from_index(i).expect("label index in range"))
                .collect(),
        };
        let arguments = decode_tags(&tags, flat)?
            .into_iter()
            .map(|(role, span)| crate::dialogue::Argument { role, span })
            .collect();
        let mention_tags = MentionTagSequence {
            tags: argmax_rows(&mention_distributions)
                .into_iter()
                .map(|i| [BioKind::O, BioKind::B, BioKind::I][i])
                .collect(),
        };
        let mentions = decode_mentions(&mention_tags, flat)?;
        Ok(PredictionResult {
            label_distributions,
            mentions,
            tags,
            frame: Frame {
                predicate: *predicate,
                arguments,
            },
        })
    }

    pub fn predict(&self, session: &DialogueSession, predicate: &Span) -> Result<PredictionResult, ModelError> {
        let flat = flatten(session)?;
        self.predict_flat(&flat, predicate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{SemanticRole, SpeakerId, Utterance};

    fn session(turns: &[&[&str]]) -> DialogueSession {
        let utts = turns
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance::new(if i % 2 == 0 { SpeakerId::A } else { SpeakerId::B }, t.iter().copied()))
            .collect();
        DialogueSession::new("t", utts, vec![], None).unwrap()
    }

    fn vocab() -> Vocab {
        Vocab::build(["[A]", "[B]", "需要", "粤语", "是", "普通话", "吗", "不算", "吧"])
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let bad = ModelConfig { heads: 3, ..ModelConfig::tiny() };
        assert!(matches!(bad.validate(), Err(ModelError::InvalidConfig(_))));
        let bad = ModelConfig { turn_clip: 0, ..ModelConfig::tiny() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn indicator_examples() {
        let s = session(&[&["需要", "粤语"], &["粤语", "是", "普通话", "吗"], &["不算", "吧"]]);
        let flat = flatten(&s).unwrap();
        let cfg = ModelConfig::tiny();
        let pred = Span::new(1, 1, 2);
        let ind = build_indicators(&flat, &pred, &cfg).unwrap();
        assert_eq!(ind.predicate.iter().enumerate().filter(|(_, v)| **v == 1).map(|(i, _)| i).collect::<Vec<_>>(), [5]);
        assert_eq!(ind.speaker, [0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0]);
        let zero = cfg.turn_clip;
        assert!(ind.turn[3..8].iter().all(|&t| t == zero));
        assert_eq!(ind.turn_distance[0], 1);
        assert_eq!(ind.turn_distance[9], -1);

        let long: Vec<Vec<&str>> = (0..8).map(|_| vec!["吗"]).collect();
        let refs: Vec<&[&str]> = long.iter().map(|v| v.as_slice()).collect();
        let flat = flatten(&session(&refs)).unwrap();
        let ind = build_indicators(&flat, &Span::new(7, 0, 1), &cfg).unwrap();
        assert_eq!(ind.turn_distance[0], 4);
        assert_eq!(ind.turn[0], 8);
    }

    #[test]
    fn output_shapes_and_stochastic_rows() {
        let s = session(&[&["需要", "粤语"], &["粤语", "是", "普通话", "吗"]]);
        let model = CsrlModel::new(ModelConfig::tiny(), vocab()).unwrap();
        let enc = model.encode_utterances(&s).unwrap();
        assert_eq!(enc.dim(), (8, 16));
        let frame = Frame::new(Span::new(1, 1, 2)).with_argument(SemanticRole::Arg0, Span::new(1, 0, 1));
        let sample = TrainingSample::new(flatten(&s).unwrap(), &frame, None, &model.config).unwrap();
        let (labels, mentions) = model.forward(&sample).unwrap();
        assert_eq!(labels.dim(), (8, 19));
        assert_eq!(mentions.dim(), (8, 3));
        for row in labels.rows().into_iter().chain(mentions.rows()) {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        let (again, _) = model.forward(&sample).unwrap();
        assert_eq!(labels, again);
    }

    #[test]
    fn encoder_is_local_to_each_turn() {
        let model = CsrlModel::new(ModelConfig::tiny(), vocab()).unwrap();
        let a = model.encode_utterances(&session(&[&["需要", "粤语"], &["是", "吗"], &["不算"]])).unwrap();
        let b = model.encode_utterances(&session(&[&["需要", "粤语"], &["不算", "吧"], &["是"]])).unwrap();
        let other = model.encode_utterances(&session(&[&["吧"], &["是", "吗"]])).unwrap();
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
            assert_eq!(a.row(3 + r), other.row(2 + r));
        }
    }

    #[test]
    fn dialogue_attention_sees_later_turns() {
        let model = CsrlModel::new(ModelConfig::tiny(), vocab()).unwrap();
        let s1 = session(&[&["需要", "粤语"], &["是", "吗"]]);
        let s2 = session(&[&["需要", "粤语"], &["普通话", "吗"]]);
        let pred = Span::new(0, 0, 1);
        let ctx = |s: &DialogueSession| {
            let flat = flatten(s).unwrap();
            let ind = build_indicators(&flat, &pred, &model.config).unwrap();
            model.contextual(&flat, &ind).unwrap()
        };
        let (c1, c2) = (ctx(&s1), ctx(&s2));
        assert_ne!(c1.row(1), c2.row(1));
    }

    #[test]
    fn utterance_length_limit() {
        let cfg = ModelConfig { max_utterance_len: 2, ..ModelConfig::tiny() };
        let model = CsrlModel::new(cfg, vocab()).unwrap();
        let err = model.encode_utterances(&session(&[&["是", "吗", "吧"]])).unwrap_err();
        assert!(matches!(err, ModelError::UtteranceTooLong { turn: 0, len: 3, max: 2 }));
    }

    #[test]
    fn loss_by_distributions() {
        let n = 5;
        let uniform = Array2::from_elem((n, 19), 1.0 / 19.0);
        let gold = [0, 3, 0, 4, 0];
        assert!((sequence_loss(&uniform, &gold, None, 1.0) - 19f64.ln()).abs() < 1e-9);
        let mut onehot = Array2::zeros((n, 19));
        for (t, &y) in gold.iter().enumerate() {
            onehot[[t, y]] = 1.0;
        }
        assert_eq!(sequence_loss(&onehot, &gold, None, 1.0), 0.0);
        let mprobs = Array2::from_elem((n, 3), 1.0 / 3.0);
        let z = [0, 1, 2, 0, 0];
        assert!(sequence_loss(&uniform, &gold, Some((&mprobs, &z)), 1.0) >= sequence_loss(&uniform, &gold, None, 1.0));
    }

    #[test]
    fn graph_loss_agrees_with_distribution_loss() {
        let s = DialogueSession {
            mentions: Some(vec![Span::new(1, 2, 3)]),
            ..session(&[&["需要", "粤语"], &["粤语", "是", "普通话", "吗"]])
        };
        let model = CsrlModel::new(ModelConfig::tiny(), vocab()).unwrap();
        let frame = Frame::new(Span::new(1, 1, 2)).with_argument(SemanticRole::Arg1, Span::new(1, 2, 3));
        let sample = TrainingSample::new(flatten(&s).unwrap(), &frame, s.mentions.as_deref(), &model.config).unwrap();
        let (labels, mentions) = model.forward(&sample).unwrap();
        let expected = sequence_loss(
            &labels,
            &sample.gold_tags.indices(),
            Some((&mentions, &sample.gold_mentions.as_ref().unwrap().indices())),
            1.0,
        );
        assert!((model.loss(&sample).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = ndarray::array![[0.25, 0.25, 0.5, 0.0], [0.4, 0.4, 0.1, 0.1]];
        assert_eq!(argmax_rows(&p), [2, 0]);
    }

    #[test]
    fn all_outside_prediction_has_no_arguments() {
        let s = session(&[&["需要", "粤语"]]);
        let mut model = CsrlModel::new(ModelConfig::tiny(), vocab()).unwrap();
        // force O: zero the output weights and bias the O logit
        let out = model.srl_head.out;
        model.params.get_mut(out.weight).fill(0.0);
        model.params.get_mut(out.bias)[[0, 0]] = 5.0;
        let res = model.predict(&s, &Span::new(0, 0, 1)).unwrap();
        assert!(res.tags.tags.iter().all(|t| *t == Tag::Outside));
        assert!(res.frame.arguments.is_empty());
    }
}

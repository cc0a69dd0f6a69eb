//! Seeded toy corpora: small dialogues with cross-turn and speaker-marker
//! arguments, and rewrite items built from them. Used by the test suites and
//! by `csrl synth`.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueSession, Frame, Locality, SemanticRole, Span, SpeakerId, Utterance, classify_argument};
use crate::linearize::{extract_triples, ContextUtterance};
use crate::model::{ModelConfig, TrainOptions};
use crate::rewriter::RewriteItem;

const WORDS: &[&str] = &[
    "需要", "粤语", "普通话", "电影", "喜欢", "看", "昨天", "明天", "北京", "上海", "去", "吃", "饭", "好",
    "很", "不", "我", "你", "他", "音乐", "听", "歌", "唱", "书", "读", "学校", "老师", "天气", "热", "冷",
    "周末", "公园", "火锅", "咖啡", "演员", "导演",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticOptions {
    pub sessions: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_utterance_len: usize,
    pub max_utterance_len: usize,
    /// Every other session repeats its first utterance two turns later, so
    /// two copies differ only in their turn.
    pub echo: bool,
    /// Attach mention spans to every `n`-th session; 0 disables.
    pub mentions_every: usize,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            sessions: 32,
            min_turns: 3,
            max_turns: 5,
            min_frames: 2,
            max_frames: 4,
            min_utterance_len: 2,
            max_utterance_len: 4,
            echo: true,
            mentions_every: 3,
            seed: 7,
        }
    }
}

/// The small tagger used on the synthetic corpus: two 32-wide attention
/// layers over a one-layer encoder.
pub fn toy_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        encoder_dim: 32,
        encoder_ffn_dim: 64,
        attn_dim: 32,
        layers: 2,
        ffn_dim: 64,
        mlp_hidden: 32,
        seed,
        ..ModelConfig::tiny()
    }
}

pub fn toy_train_options() -> TrainOptions {
    TrainOptions {
        epochs: 200,
        batch_size: 8,
        learning_rate: 2e-3,
    }
}

struct Occupied(HashSet<(usize, usize)>);

impl Occupied {
    fn free(&self, span: &Span) -> bool {
        if span.is_speaker_marker {
            return !self.0.contains(&(span.turn, usize::MAX));
        }
        (span.start..span.end).all(|p| !self.0.contains(&(span.turn, p)))
    }

    fn take(&mut self, span: &Span) {
        if span.is_speaker_marker {
            self.0.insert((span.turn, usize::MAX));
        } else {
            self.0.extend((span.start..span.end).map(|p| (span.turn, p)));
        }
    }
}

fn random_span(rng: &mut ChaCha8Rng, utterances: &[Utterance], turn: usize) -> Span {
    let len = utterances[turn].tokens.len();
    let width = rng.random_range(1..=2.min(len));
    let start = rng.random_range(0..=len - width);
    Span::new(turn, start, start + width)
}

fn random_frame(
    rng: &mut ChaCha8Rng,
    utterances: &[Utterance],
    forced: Option<(usize, Span)>,
) -> Frame {
    let turns = utterances.len();
    let (pred_turn, forced_arg) = match forced {
        Some((t, s)) => (t, Some(s)),
        None => (rng.random_range(1..turns), None),
    };
    let pred_pos = rng.random_range(0..utterances[pred_turn].tokens.len());
    let predicate = Span::new(pred_turn, pred_pos, pred_pos + 1);
    let mut occupied = Occupied(HashSet::new());
    occupied.take(&predicate);
    let mut frame = Frame::new(predicate);
    if rng.random_bool(0.6) {
        let t = if rng.random_bool(0.5) { pred_turn - 1 } else { pred_turn };
        let m = Span::marker(t);
        occupied.take(&m);
        frame = frame.with_argument(SemanticRole::Arg0, m);
    }
    let arg1 = match forced_arg {
        Some(s) if occupied.free(&s) => Some(s),
        _ => (0..8)
            .map(|_| {
                let t = rng.random_range(0..=pred_turn);
                random_span(rng, utterances, t)
            })
            .find(|s| occupied.free(s)),
    };
    if let Some(s) = arg1 {
        occupied.take(&s);
        frame = frame.with_argument(SemanticRole::Arg1, s);
    }
    let extra = *[SemanticRole::AmTmp, SemanticRole::AmLoc, SemanticRole::AmNeg, SemanticRole::Arg2]
        .choose(rng)
        .expect("non-empty");
    if rng.random_bool(0.35) {
        let t = rng.random_range(0..=pred_turn);
        let pos = rng.random_range(0..utterances[t].tokens.len());
        let s = Span::new(t, pos, pos + 1);
        if occupied.free(&s) {
            occupied.take(&s);
            frame = frame.with_argument(extra, s);
        }
    }
    frame
}

/// A reproducible corpus of small two-party dialogues.
pub fn synthetic_corpus(options: &SyntheticOptions) -> Vec<DialogueSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let min_turns = options.min_turns.max(2);
    let max_turns = options.max_turns.max(min_turns);
    let min_len = options.min_utterance_len.max(1);
    let max_len = options.max_utterance_len.max(min_len);
    (0..options.sessions)
        .map(|i| {
            let echo = options.echo && i % 2 == 0 && max_turns >= 4;
            let turns = if echo {
                rng.random_range(min_turns.max(4)..=max_turns)
            } else {
                rng.random_range(min_turns..=max_turns)
            };
            let mut utterances: Vec<Utterance> = (0..turns)
                .map(|t| {
                    let len = rng.random_range(min_len..=max_len);
                    let speaker = if t % 2 == 0 { SpeakerId::A } else { SpeakerId::B };
                    Utterance::new(speaker, (0..len).map(|_| *WORDS.choose(&mut rng).expect("non-empty")))
                })
                .collect();
            let mut frames = Vec::new();
            if echo {
                utterances[2].tokens = utterances[0].tokens.clone();
                let target = random_span(&mut rng, &utterances, 0);
                frames.push(random_frame(&mut rng, &utterances, Some((3, target))));
            }
            let count = rng.random_range(options.min_frames..=options.max_frames.max(options.min_frames));
            let mut attempts = 0;
            while frames.len() < count && attempts < 32 {
                attempts += 1;
                let f = random_frame(&mut rng, &utterances, None);
                if frames.iter().all(|g: &Frame| g.predicate != f.predicate) {
                    frames.push(f);
                }
            }
            let mentions = (options.mentions_every > 0 && i % options.mentions_every == 0).then(|| {
                frames
                    .iter()
                    .flat_map(|f| {
                        f.arguments
                            .iter()
                            .filter(|a| !a.span.is_speaker_marker && classify_argument(f, &a.span) == Locality::Cross)
                            .map(|a| a.span)
                    })
                    .collect()
            });
            DialogueSession::new(format!("synth-{i:03}"), utterances, frames, mentions).expect("non-empty session")
        })
        .collect()
}

/// Rewrite items whose target restores the omitted argument in front of the
/// last utterance.
pub fn synthetic_rewrite_items(count: usize, seed: u64) -> Vec<RewriteItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    while items.len() < count {
        let topic: Vec<&str> = WORDS.choose_multiple(&mut rng, 2).copied().collect();
        let reply: Vec<&str> = WORDS.choose_multiple(&mut rng, 2).copied().collect();
        let first = Utterance::new(SpeakerId::A, topic.iter().copied().chain(["怎么样"]));
        let second = Utterance::new(SpeakerId::B, reply.iter().copied());
        let frame = Frame::new(Span::new(1, 1, 2)).with_argument(SemanticRole::Arg1, Span::new(0, 0, 2));
        let session = DialogueSession::new("rewrite", vec![first, second], vec![frame], None).expect("non-empty");
        let target: Vec<String> = topic.iter().chain(&reply).map(|s| s.to_string()).collect();
        if !seen.insert(target.clone()) {
            continue;
        }
        let triples = extract_triples(&session, &session.frames, 0).expect("frame is in range");
        let context = session
            .utterances
            .iter()
            .map(|u| ContextUtterance { speaker: u.speaker, tokens: u.tokens.clone() })
            .collect();
        items.push(RewriteItem { triples, context, response_speaker: SpeakerId::B, target });
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{compute_stats, validate_session};

    #[test]
    fn corpus_is_valid_and_reproducible() {
        let opts = SyntheticOptions::default();
        let a = synthetic_corpus(&opts);
        assert_eq!(a, synthetic_corpus(&opts));
        assert_eq!(a.len(), 32);
        for s in &a {
            assert!(validate_session(s).is_empty(), "{:?}", validate_session(s));
            assert!((3..=5).contains(&s.turns()));
            assert!((2..=4).contains(&s.frames.len()));
        }
        let stats = compute_stats(&a).unwrap();
        assert!(stats.cross_argument_ratio >= 30.0, "{}", stats.cross_argument_ratio);
        assert!(stats.speaker_argument_ratio >= 10.0, "{}", stats.speaker_argument_ratio);
        assert!(a.iter().any(|s| s.mentions.is_some()));
    }

    #[test]
    fn rewrite_items_are_distinct() {
        let items = synthetic_rewrite_items(8, 3);
        assert_eq!(items.len(), 8);
        let targets: HashSet<_> = items.iter().map(|i| i.target.clone()).collect();
        assert_eq!(targets.len(), 8);
        assert_eq!(items[0].triples.len(), 1);
    }
}

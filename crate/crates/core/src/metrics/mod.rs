//! Tuple-level argument scoring, split by whether the argument sits in the
//! predicate's turn, plus text-generation metrics in [`generation`].

pub mod generation;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::dialogue::{classify_argument, flatten, DialogueSession, FlatDialogue, Frame, Locality, SemanticRole, Span};

pub use generation::{
    bleu, distinct_n, evaluate_generation, exact_match, rouge, tokenize, BleuOptions, GenEvalReport,
    RougeScores,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("frame references unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{session}`: dangling predicate {detail}")]
    DanglingPredicate { session: String, detail: String },
    #[error("session `{session}`: invalid argument {detail}")]
    InvalidArgument { session: String, detail: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{references} references but {hypotheses} hypotheses")]
    LengthMismatch { references: usize, hypotheses: usize },
}

/// One (predicate, argument, role) triple. Ordering and equality ignore
/// `locality`, which is a function of the two ranges.
#[derive(Debug, Clone)]
pub struct ArgTuple {
    pub session_id: String,
    pub predicate: (usize, usize),
    pub argument: (usize, usize),
    pub role: SemanticRole,
    pub locality: Locality,
}

impl ArgTuple {
    fn key(&self) -> (&str, (usize, usize), (usize, usize), SemanticRole) {
        (&self.session_id, self.predicate, self.argument, self.role)
    }
}

impl PartialEq for ArgTuple {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for ArgTuple {}

impl PartialOrd for ArgTuple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ArgTuple {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

pub fn tuples_for_frame(flat: &FlatDialogue, frame: &Frame) -> Result<Vec<ArgTuple>, MetricsError> {
    let predicate = flat
        .flat_index(&frame.predicate)
        .map_err(|e| MetricsError::DanglingPredicate {
            session: flat.session_id.clone(),
            detail: e.to_string(),
        })?;
    frame
        .arguments
        .iter()
        .map(|arg| {
            let argument = flat
                .flat_index(&arg.span)
                .map_err(|e| MetricsError::InvalidArgument {
                    session: flat.session_id.clone(),
                    detail: e.to_string(),
                })?;
            Ok(ArgTuple {
                session_id: flat.session_id.clone(),
                predicate,
                argument,
                role: arg.role,
                locality: classify_argument(frame, &arg.span),
            })
        })
        .collect()
}

/// Set of tuples for `(session_id, frame)` pairs resolved against `sessions`.
pub fn frames_to_tuples(
    sessions: &[DialogueSession],
    frames: &[(String, Frame)],
) -> Result<BTreeSet<ArgTuple>, MetricsError> {
    let mut flats: HashMap<&str, FlatDialogue> = HashMap::new();
    for s in sessions {
        let flat = flatten(s).map_err(|e| MetricsError::DanglingPredicate {
            session: s.session_id.clone(),
            detail: e.to_string(),
        })?;
        flats.insert(&s.session_id, flat);
    }
    let mut out = BTreeSet::new();
    for (sid, frame) in frames {
        let flat = flats
            .get(sid.as_str())
            .ok_or_else(|| MetricsError::UnknownSession(sid.clone()))?;
        out.extend(tuples_for_frame(flat, frame)?);
    }
    Ok(out)
}

/// The gold frames of each session, keyed by session id.
pub fn gold_frames(sessions: &[DialogueSession]) -> Vec<(String, Frame)> {
    sessions
        .iter()
        .flat_map(|s| s.frames.iter().map(|f| (s.session_id.clone(), f.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

impl SplitScores {
    pub fn from_counts(gold: usize, pred: usize, correct: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(correct, pred);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SplitScores {
            precision,
            recall,
            f1,
            gold,
            pred,
            correct,
        }
    }
}

impl Serialize for SplitScores {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            precision: f64,
            recall: f64,
            f1: f64,
            precision_pct: f64,
            recall_pct: f64,
            f1_pct: f64,
            gold: usize,
            pred: usize,
            correct: usize,
        }
        Repr {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            precision_pct: 100.0 * self.precision,
            recall_pct: 100.0 * self.recall,
            f1_pct: 100.0 * self.f1,
            gold: self.gold,
            pred: self.pred,
            correct: self.correct,
        }
        .serialize(serializer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub all: SplitScores,
    pub intra: SplitScores,
    pub cross: SplitScores,
}

/// Micro-averaged precision, recall and F1 on exact tuple matches.
pub fn f1_report(gold: &BTreeSet<ArgTuple>, pred: &BTreeSet<ArgTuple>) -> EvalReport {
    let split = |loc: Option<Locality>| {
        let keep = |t: &&ArgTuple| loc.is_none_or(|l| t.locality == l);
        let g = gold.iter().filter(keep).count();
        let p = pred.iter().filter(keep).count();
        let c = pred.iter().filter(keep).filter(|t| gold.contains(*t)).count();
        SplitScores::from_counts(g, p, c)
    };
    EvalReport {
        all: split(None),
        intra: split(Some(Locality::Intra)),
        cross: split(Some(Locality::Cross)),
    }
}

/// A mention as a flat range within its session.
pub type MentionKey = (String, (usize, usize));

pub fn mention_keys(flat: &FlatDialogue, mentions: &[Span]) -> Result<BTreeSet<MentionKey>, MetricsError> {
    mentions
        .iter()
        .map(|m| {
            flat.flat_index(m)
                .map(|r| (flat.session_id.clone(), r))
                .map_err(|e| MetricsError::InvalidArgument {
                    session: flat.session_id.clone(),
                    detail: e.to_string(),
                })
        })
        .collect()
}

/// Micro P/R/F1 on exact mention spans.
pub fn mention_f1(gold: &BTreeSet<MentionKey>, pred: &BTreeSet<MentionKey>) -> SplitScores {
    SplitScores::from_counts(gold.len(), pred.len(), gold.intersection(pred).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{SpeakerId, Utterance};

    fn tuple(arg: usize, role: SemanticRole, locality: Locality) -> ArgTuple {
        ArgTuple {
            session_id: "s".into(),
            predicate: (10, 11),
            argument: (arg, arg + 1),
            role,
            locality,
        }
    }

    #[test]
    fn identical_sets_score_one() {
        let gold: BTreeSet<_> = [
            tuple(1, SemanticRole::Arg0, Locality::Intra),
            tuple(2, SemanticRole::Arg1, Locality::Cross),
        ]
        .into();
        let r = f1_report(&gold, &gold);
        for s in [r.all, r.intra, r.cross] {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn half_recall() {
        let gold: BTreeSet<_> = [
            tuple(1, SemanticRole::Arg0, Locality::Intra),
            tuple(2, SemanticRole::Arg1, Locality::Intra),
        ]
        .into();
        let pred: BTreeSet<_> = [tuple(1, SemanticRole::Arg0, Locality::Intra)].into();
        let r = f1_report(&gold, &pred);
        assert_eq!(r.all.precision, 1.0);
        assert_eq!(r.all.recall, 0.5);
        assert!((r.all.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.cross, SplitScores::from_counts(0, 0, 0));
        assert_eq!(r.cross.f1, 0.0);
    }

    #[test]
    fn empty_predictions() {
        let gold: BTreeSet<_> = [tuple(1, SemanticRole::Arg0, Locality::Intra)].into();
        let r = f1_report(&gold, &BTreeSet::new());
        assert_eq!((r.all.precision, r.all.recall, r.all.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn frames_to_tuples_counts_and_dedups() {
        let s = DialogueSession::new(
            "s",
            vec![
                Utterance::new(SpeakerId::A, ["a", "b"]),
                Utterance::new(SpeakerId::B, ["c", "d", "e"]),
            ],
            vec![],
            None,
        )
        .unwrap();
        let f = Frame::new(Span::new(1, 1, 2))
            .with_argument(SemanticRole::Arg0, Span::marker(0))
            .with_argument(SemanticRole::Arg1, Span::new(1, 2, 3));
        let t = frames_to_tuples(&[s.clone()], &[("s".into(), f.clone())]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.iter().filter(|x| x.locality == Locality::Cross).count(), 1);
        let dup = frames_to_tuples(&[s.clone()], &[("s".into(), f.clone()), ("s".into(), f.clone())]).unwrap();
        assert_eq!(dup.len(), 2);
        assert_eq!(
            frames_to_tuples(&[s.clone()], &[("zz".into(), f)]).unwrap_err(),
            MetricsError::UnknownSession("zz".into())
        );
        let dangling = Frame::new(Span::new(4, 0, 1));
        assert!(matches!(
            frames_to_tuples(&[s], &[("s".into(), dangling)]),
            Err(MetricsError::DanglingPredicate { .. })
        ));
    }

    #[test]
    fn report_json_has_percentages() {
        let v = serde_json::to_value(SplitScores::from_counts(4, 2, 1)).unwrap();
        assert_eq!(v["precision"], 0.5);
        assert_eq!(v["precision_pct"], 50.0);
        assert_eq!(v["gold"], 4);
    }

    #[test]
    fn mention_scores() {
        let k = |a: usize| ("s".to_string(), (a, a + 1));
        let gold: BTreeSet<_> = [k(1), k(3)].into();
        let pred: BTreeSet<_> = [k(1), k(5), k(7)].into();
        let s = mention_f1(&gold, &pred);
        assert_eq!((s.gold, s.pred, s.correct), (2, 3, 1));
        assert!((s.f1 - 0.4).abs() < 1e-15);
    }
}

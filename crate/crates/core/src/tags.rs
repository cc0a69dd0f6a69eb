//! BIO codec between frames and per-token label sequences over a
//! [`FlatDialogue`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dialogue::{DialogueError, FlatDialogue, Frame, SemanticRole, Span};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("arguments {first} and {second} overlap")]
    Overlap {
        first: SemanticRole,
        second: SemanticRole,
    },
    #[error("role {0} is realized by more than one span")]
    DuplicateRole(SemanticRole),
    #[error("tag sequence has length {got}, dialogue has {expected} items")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioKind {
    O,
    B,
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(SemanticRole),
    Inside(SemanticRole),
}

impl Tag {
    pub fn kind(self) -> BioKind {
        match self {
            Tag::Outside => BioKind::O,
            Tag::Begin(_) => BioKind::B,
            Tag::Inside(_) => BioKind::I,
        }
    }

    pub fn role(self) -> Option<SemanticRole> {
        match self {
            Tag::Outside => None,
            Tag::Begin(r) | Tag::Inside(r) => Some(r),
        }
    }

    /// Index into [`label_vocabulary`].
    pub fn index(self) -> usize {
        match self {
            Tag::Outside => 0,
            Tag::Begin(r) => 1 + 2 * r.index(),
            Tag::Inside(r) => 2 + 2 * r.index(),
        }
    }

    pub fn from_index(index: usize) -> Option<Tag> {
        if index == 0 {
            return Some(Tag::Outside);
        }
        let role = *SemanticRole::ALL.get((index - 1) / 2)?;
        Some(if index % 2 == 1 {
            Tag::Begin(role)
        } else {
            Tag::Inside(role)
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(r) => write!(f, "B-{r}"),
            Tag::Inside(r) => write!(f, "I-{r}"),
        }
    }
}

impl FromStr for Tag {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || CodecError::UnknownLabel(s.to_string());
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, role) = s.split_once('-').ok_or_else(unknown)?;
        let role: SemanticRole = role.parse().map_err(|_| unknown())?;
        match prefix {
            "B" => Ok(Tag::Begin(role)),
            "I" => Ok(Tag::Inside(role)),
            _ => Err(unknown()),
        }
    }
}

pub const NUM_LABELS: usize = 1 + 2 * SemanticRole::ALL.len();
pub const NUM_MENTION_LABELS: usize = 3;

/// `O` followed by `B-`/`I-` pairs in role order.
pub fn label_vocabulary() -> Vec<String> {
    (0..NUM_LABELS)
        .map(|i| Tag::from_index(i).unwrap().to_string())
        .collect()
}

/// Hex SHA-256 of the newline-joined label vocabulary.
pub fn label_vocabulary_hash() -> String {
    let mut hasher = Sha256::new();
    hasher.update(label_vocabulary().join("\n").as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub tags: Vec<Tag>,
}

impl TagSequence {
    pub fn outside(len: usize) -> Self {
        TagSequence {
            tags: vec![Tag::Outside; len],
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.tags.iter().map(|t| t.index()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.tags.iter().map(Tag::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionTagSequence {
    pub tags: Vec<BioKind>,
}

impl MentionTagSequence {
    pub fn indices(&self) -> Vec<usize> {
        self.tags
            .iter()
            .map(|k| match k {
                BioKind::O => 0,
                BioKind::B => 1,
                BioKind::I => 2,
            })
            .collect()
    }
}

/// Gold encoding of a frame. Predicate positions stay `O`.
pub fn encode_frame(flat: &FlatDialogue, frame: &Frame) -> Result<TagSequence, CodecError> {
    let mut owner: Vec<Option<SemanticRole>> = vec![None; flat.len()];
    let mut seq = TagSequence::outside(flat.len());
    let mut roles = Vec::with_capacity(frame.arguments.len());
    for arg in &frame.arguments {
        if roles.contains(&arg.role) {
            return Err(CodecError::DuplicateRole(arg.role));
        }
        roles.push(arg.role);
        let (start, end) = flat.flat_index(&arg.span)?;
        for i in start..end {
            if let Some(prev) = owner[i] {
                return Err(CodecError::Overlap {
                    first: prev,
                    second: arg.role,
                });
            }
            owner[i] = Some(arg.role);
            seq.tags[i] = if i == start {
                Tag::Begin(arg.role)
            } else {
                Tag::Inside(arg.role)
            };
        }
    }
    Ok(seq)
}

/// Reads spans off a (possibly malformed) tag sequence.
///
/// A stray `I-x` opens a new `x` span, as does `I-y` after `x`. Runs are cut
/// at turn boundaries and around speaker markers so that every result is a
/// valid [`Span`].
pub fn decode_tags(
    tags: &TagSequence,
    flat: &FlatDialogue,
) -> Result<Vec<(SemanticRole, Span)>, CodecError> {
    if tags.len() != flat.len() {
        return Err(CodecError::LengthMismatch {
            expected: flat.len(),
            got: tags.len(),
        });
    }
    let mut out = Vec::new();
    let mut open: Option<(SemanticRole, usize)> = None;
    let mut close = |open: &mut Option<(SemanticRole, usize)>, end: usize| -> Result<(), CodecError> {
        if let Some((role, start)) = open.take() {
            out.push((role, flat.span_of(start, end)?));
        }
        Ok(())
    };
    for (i, tag) in tags.tags.iter().enumerate() {
        let item = &flat.items[i];
        let boundary = i > 0 && (item.is_marker || flat.items[i - 1].is_marker);
        match *tag {
            Tag::Outside => close(&mut open, i)?,
            Tag::Begin(role) => {
                close(&mut open, i)?;
                open = Some((role, i));
            }
            Tag::Inside(role) => {
                let continues = matches!(open, Some((r, _)) if r == role) && !boundary;
                if !continues {
                    close(&mut open, i)?;
                    open = Some((role, i));
                }
            }
        }
    }
    close(&mut open, flat.len())?;
    Ok(out)
}

/// Role-free BIO over mention spans. Overlaps keep the longer span, then
/// the earlier one.
pub fn encode_mentions(
    flat: &FlatDialogue,
    mentions: &[Span],
) -> Result<MentionTagSequence, CodecError> {
    let mut ranges = mentions
        .iter()
        .map(|m| flat.flat_index(m))
        .collect::<Result<Vec<_>, _>>()?;
    ranges.sort_by_key(|&(s, e)| (std::cmp::Reverse(e - s), s));
    let mut tags = vec![BioKind::O; flat.len()];
    let mut taken = vec![false; flat.len()];
    for (s, e) in ranges {
        if taken[s..e].iter().any(|&t| t) {
            continue;
        }
        for i in s..e {
            taken[i] = true;
            tags[i] = if i == s { BioKind::B } else { BioKind::I };
        }
    }
    Ok(MentionTagSequence { tags })
}

/// Mention spans read off a mention tag sequence with the same repair rules
/// as [`decode_tags`].
pub fn decode_mentions(tags: &MentionTagSequence, flat: &FlatDialogue) -> Result<Vec<Span>, CodecError> {
    let as_roles = TagSequence {
        tags: tags
            .tags
            .iter()
            .map(|k| match k {
                BioKind::O => Tag::Outside,
                BioKind::B => Tag::Begin(SemanticRole::Arg0),
                BioKind::I => Tag::Inside(SemanticRole::Arg0),
            })
            .collect(),
    };
    Ok(decode_tags(&as_roles, flat)?.into_iter().map(|(_, s)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{flatten, DialogueSession, SpeakerId, Utterance};

    fn flat8() -> FlatDialogue {
        let s = DialogueSession::new(
            "s0",
            vec![
                Utterance::new(SpeakerId::A, ["需要", "粤语"]),
                Utterance::new(SpeakerId::B, ["粤语", "是", "普通话", "吗"]),
            ],
            vec![],
            None,
        )
        .unwrap();
        flatten(&s).unwrap()
    }

    fn seq(labels: &[&str]) -> TagSequence {
        TagSequence {
            tags: labels.iter().map(|l| l.parse().unwrap()).collect(),
        }
    }

    #[test]
    fn vocabulary() {
        let v = label_vocabulary();
        assert_eq!(v.len(), 19);
        assert_eq!(v[0], "O");
        assert_eq!(v[1], "B-ARG0");
        assert_eq!(v[2], "I-ARG0");
        assert_eq!(v[18], "I-AM-NEG");
        let mut dedup = v.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 19);
        for (i, l) in v.iter().enumerate() {
            assert_eq!(l.parse::<Tag>().unwrap().index(), i);
        }
        assert!("B-ARG9".parse::<Tag>().is_err());
        assert!("X-ARG0".parse::<Tag>().is_err());
    }

    #[test]
    fn encode_examples() {
        let flat = flat8();
        let frame = Frame::new(Span::new(1, 1, 2)).with_argument(SemanticRole::Arg0, Span::new(1, 0, 1));
        let tags = encode_frame(&flat, &frame).unwrap();
        assert_eq!(tags.tags[4], Tag::Begin(SemanticRole::Arg0));
        assert_eq!(tags.tags.iter().filter(|t| **t == Tag::Outside).count(), 7);

        let empty = encode_frame(&flat, &Frame::new(Span::new(1, 1, 2))).unwrap();
        assert_eq!(empty, TagSequence::outside(8));

        let clash = Frame::new(Span::new(1, 1, 2))
            .with_argument(SemanticRole::Arg0, Span::new(1, 2, 4))
            .with_argument(SemanticRole::Arg1, Span::new(1, 3, 4));
        assert_eq!(
            encode_frame(&flat, &clash).unwrap_err(),
            CodecError::Overlap {
                first: SemanticRole::Arg0,
                second: SemanticRole::Arg1
            }
        );
        let dup = Frame::new(Span::new(1, 1, 2))
            .with_argument(SemanticRole::Arg0, Span::new(1, 2, 3))
            .with_argument(SemanticRole::Arg0, Span::new(1, 3, 4));
        assert!(matches!(encode_frame(&flat, &dup), Err(CodecError::DuplicateRole(_))));
    }

    #[test]
    fn decode_examples() {
        let flat = flat8();
        let got = decode_tags(&seq(&["O", "B-ARG1", "I-ARG1", "O", "O", "O", "O", "O"]), &flat).unwrap();
        assert_eq!(got, vec![(SemanticRole::Arg1, flat.span_of(1, 3).unwrap())]);

        let got = decode_tags(&seq(&["I-ARG0", "O", "O", "O", "O", "O", "O", "O"]), &flat).unwrap();
        assert_eq!(got, vec![(SemanticRole::Arg0, Span::marker(0))]);

        let got = decode_tags(&seq(&["O", "B-ARG0", "I-ARG1", "O", "O", "O", "O", "O"]), &flat).unwrap();
        assert_eq!(
            got,
            vec![
                (SemanticRole::Arg0, Span::new(0, 0, 1)),
                (SemanticRole::Arg1, Span::new(0, 1, 2))
            ]
        );
    }

    #[test]
    fn decode_splits_at_boundaries() {
        let flat = flat8();
        // run over turn 0 tokens, the B marker and into turn 1
        let got = decode_tags(
            &seq(&["O", "B-ARG1", "I-ARG1", "I-ARG1", "I-ARG1", "O", "O", "O"]),
            &flat,
        )
        .unwrap();
        assert_eq!(
            got,
            vec![
                (SemanticRole::Arg1, Span::new(0, 0, 2)),
                (SemanticRole::Arg1, Span::marker(1)),
                (SemanticRole::Arg1, Span::new(1, 0, 1)),
            ]
        );
        assert!(matches!(
            decode_tags(&TagSequence::outside(3), &flat),
            Err(CodecError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mention_examples() {
        let flat = flat8();
        let m = encode_mentions(&flat, &[Span::new(0, 1, 2)]).unwrap();
        assert_eq!(m.tags[2], BioKind::B);
        assert_eq!(m.tags.iter().filter(|k| **k == BioKind::O).count(), 7);

        let m = encode_mentions(&flat, &[Span::new(1, 0, 2)]).unwrap();
        assert_eq!(&m.tags[4..6], &[BioKind::B, BioKind::I]);

        assert!(encode_mentions(&flat, &[]).unwrap().tags.iter().all(|k| *k == BioKind::O));

        let m = encode_mentions(&flat, &[Span::new(1, 2, 4), Span::new(1, 0, 3)]).unwrap();
        assert_eq!(
            &m.tags[4..8],
            &[BioKind::B, BioKind::I, BioKind::I, BioKind::O]
        );
    }

    #[test]
    fn mention_round_trip() {
        let flat = flat8();
        let spans = vec![Span::new(0, 1, 2), Span::new(1, 0, 3)];
        let enc = encode_mentions(&flat, &spans).unwrap();
        assert_eq!(decode_mentions(&enc, &flat).unwrap(), spans);
    }
}

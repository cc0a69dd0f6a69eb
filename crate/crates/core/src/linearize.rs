//! Predicate-argument triples, their linearization in front of the dialogue
//! context, and the attention masks over the resulting sequence.
//!
//! Layout: `Z` (triples) · `C` (context utterances, each closed by
//! [`EOS`]) · `R` ([`BOS`] followed by the response).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{flatten, DialogueError, DialogueSession, Frame, SemanticRole, SpeakerId};

pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";

#[derive(Debug, Error, PartialEq)]
pub enum LinearizeError {
    #[error("context has no utterances")]
    EmptyContext,
    #[error("reserved token `{0}` inside content")]
    ReservedToken(String),
    #[error("triple has an empty predicate or argument")]
    EmptyTriple,
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PATriple {
    pub predicate_text: Vec<String>,
    pub role: SemanticRole,
    pub argument_text: Vec<String>,
}

impl PATriple {
    /// `predicate tokens · role label · argument tokens`.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = self.predicate_text.clone();
        out.push(self.role.to_string());
        out.extend(self.argument_text.iter().cloned());
        out
    }
}

/// One triple per argument of every frame. Seed 0 keeps the canonical order
/// (predicate position, role, argument position); other seeds shuffle
/// deterministically.
pub fn extract_triples(
    session: &DialogueSession,
    frames: &[Frame],
    order_seed: u64,
) -> Result<Vec<PATriple>, LinearizeError> {
    let flat = flatten(session)?;
    let text = |range: (usize, usize)| -> Vec<String> {
        flat.items[range.0..range.1].iter().map(|it| it.text.clone()).collect()
    };
    let mut keyed = Vec::new();
    for frame in frames {
        let p = flat.flat_index(&frame.predicate)?;
        for arg in &frame.arguments {
            let a = flat.flat_index(&arg.span)?;
            keyed.push((
                (p, arg.role, a),
                PATriple {
                    predicate_text: text(p),
                    role: arg.role,
                    argument_text: text(a),
                },
            ));
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    let mut triples: Vec<PATriple> = keyed.into_iter().map(|(_, t)| t).collect();
    if order_seed != 0 {
        log::debug!("shuffling {} triples with seed {order_seed}", triples.len());
        triples.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    }
    Ok(triples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentType {
    #[serde(rename = "E_A")]
    SameSpeaker,
    #[serde(rename = "E_B")]
    OtherSpeaker,
    #[serde(rename = "E_SRL")]
    Srl,
}

impl SegmentType {
    pub fn index(self) -> usize {
        match self {
            SegmentType::SameSpeaker => 0,
            SegmentType::OtherSpeaker => 1,
            SegmentType::Srl => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Z,
    C,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Bi,
    Triple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskOptions {
    pub kind: MaskKind,
    /// Z tokens may attend to the context.
    pub z_sees_context: bool,
    /// Context tokens may attend to Z.
    pub context_sees_z: bool,
    /// Response tokens may attend to Z.
    pub response_sees_z: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        MaskOptions {
            kind: MaskKind::Triple,
            z_sees_context: false,
            context_sees_z: true,
            response_sees_z: true,
        }
    }
}

impl MaskOptions {
    pub fn with_kind(kind: MaskKind) -> Self {
        MaskOptions {
            kind,
            ..Self::default()
        }
    }

    /// Nothing outside Z can see Z.
    pub fn deny_z(mut self) -> Self {
        self.context_sees_z = false;
        self.response_sees_z = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextUtterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedInput {
    pub tokens: Vec<String>,
    pub segments: Vec<SegmentType>,
    pub positions: Vec<usize>,
    pub regions: Vec<Region>,
    /// Triple that each Z token belongs to.
    pub triple_index: Vec<Option<usize>>,
    /// Context utterance that each C token belongs to.
    pub utterance_index: Vec<Option<usize>>,
    pub options: MaskOptions,
    /// `mask[[i, j]]`: token `i` may attend to token `j`.
    pub mask: Array2<bool>,
}

fn check_content<'a>(tokens: impl IntoIterator<Item = &'a String>) -> Result<(), LinearizeError> {
    for t in tokens {
        if t == BOS || t == EOS {
            return Err(LinearizeError::ReservedToken(t.clone()));
        }
    }
    Ok(())
}

pub fn linearize(
    triples: &[PATriple],
    context: &[ContextUtterance],
    response: Option<&[String]>,
    options: &MaskOptions,
    response_speaker: SpeakerId,
) -> Result<LinearizedInput, LinearizeError> {
    if context.is_empty() {
        return Err(LinearizeError::EmptyContext);
    }
    let mut out = LinearizedInput {
        tokens: Vec::new(),
        segments: Vec::new(),
        positions: Vec::new(),
        regions: Vec::new(),
        triple_index: Vec::new(),
        utterance_index: Vec::new(),
        options: *options,
        mask: Array2::from_elem((0, 0), false),
    };
    let push = |out: &mut LinearizedInput, tok: String, seg, pos, region, triple, utt| {
        out.tokens.push(tok);
        out.segments.push(seg);
        out.positions.push(pos);
        out.regions.push(region);
        out.triple_index.push(triple);
        out.utterance_index.push(utt);
    };
    let mut z_pos = 0;
    for (ti, triple) in triples.iter().enumerate() {
        if triple.predicate_text.is_empty() || triple.argument_text.is_empty() {
            return Err(LinearizeError::EmptyTriple);
        }
        check_content(triple.predicate_text.iter().chain(&triple.argument_text))?;
        if options.kind == MaskKind::Triple {
            z_pos = 0;
        }
        for tok in triple.tokens() {
            push(&mut out, tok, SegmentType::Srl, z_pos, Region::Z, Some(ti), None);
            z_pos += 1;
        }
    }
    for (ui, utt) in context.iter().enumerate() {
        check_content(&utt.tokens)?;
        let seg = if utt.speaker == response_speaker {
            SegmentType::SameSpeaker
        } else {
            SegmentType::OtherSpeaker
        };
        for (p, tok) in utt.tokens.iter().chain(std::iter::once(&EOS.to_string())).enumerate() {
            push(&mut out, tok.clone(), seg, p, Region::C, None, Some(ui));
        }
    }
    push(&mut out, BOS.to_string(), SegmentType::SameSpeaker, 0, Region::R, None, None);
    if let Some(resp) = response {
        check_content(resp)?;
        for (p, tok) in resp.iter().enumerate() {
            push(&mut out, tok.clone(), SegmentType::SameSpeaker, p + 1, Region::R, None, None);
        }
    }
    out.mask = build_mask(&out, options);
    Ok(out)
}

/// Attention mask over a linearized input.
///
/// R attends Z, C and R up to itself. C attends C and (optionally) Z. Z
/// attends its own triple (`Triple`) or all of Z (`Bi`), never R, and C only
/// when `z_sees_context` is set. The diagonal is always open.
pub fn build_mask(input: &LinearizedInput, options: &MaskOptions) -> Array2<bool> {
    let n = input.tokens.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            return true;
        }
        match (input.regions[i], input.regions[j]) {
            (Region::R, Region::R) => j <= i,
            (Region::R, Region::C) => true,
            (Region::R, Region::Z) => options.response_sees_z,
            (Region::C, Region::C) => true,
            (Region::C, Region::Z) => options.context_sees_z,
            (Region::C, Region::R) => false,
            (Region::Z, Region::Z) => match options.kind {
                MaskKind::Bi => true,
                MaskKind::Triple => input.triple_index[i] == input.triple_index[j],
            },
            (Region::Z, Region::C) => options.z_sees_context,
            (Region::Z, Region::R) => false,
        }
    })
}

/// Row-wise run lengths, starting with a (possibly empty) run of `false`.
pub fn mask_rle(mask: &Array2<bool>) -> Vec<Vec<usize>> {
    mask.rows()
        .into_iter()
        .map(|row| {
            let mut runs = Vec::new();
            let mut current = false;
            let mut len = 0;
            for &v in row.iter() {
                if v == current {
                    len += 1;
                } else {
                    runs.push(len);
                    current = v;
                    len = 1;
                }
            }
            runs.push(len);
            runs
        })
        .collect()
}

pub fn mask_from_rle(rows: &[Vec<usize>]) -> Array2<bool> {
    let n = rows.len();
    let mut mask = Array2::from_elem((n, n), false);
    for (i, runs) in rows.iter().enumerate() {
        let mut col = 0;
        for (k, &len) in runs.iter().enumerate() {
            for c in col..col + len {
                mask[[i, c]] = k % 2 == 1;
            }
            col += len;
        }
    }
    mask
}

impl LinearizedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn region_len(&self, region: Region) -> usize {
        self.regions.iter().filter(|r| **r == region).count()
    }

    /// Index of the first R token ([`BOS`]).
    pub fn response_start(&self) -> usize {
        self.regions.iter().position(|r| *r == Region::R).expect("R always holds BOS")
    }

    /// The context utterances with [`EOS`] stripped.
    pub fn context_utterances(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        for (tok, utt) in self.tokens.iter().zip(&self.utterance_index) {
            if let Some(u) = *utt {
                if out.len() <= u {
                    out.resize(u + 1, Vec::new());
                }
                if tok != EOS {
                    out[u].push(tok.clone());
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tokens": self.tokens,
            "segments": self.segments,
            "positions": self.positions,
            "regions": self.regions,
            "mask_kind": self.options.kind,
            "mask_rle": mask_rle(&self.mask),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Span, Utterance};

    fn triple(len_pred: usize, len_arg: usize) -> PATriple {
        PATriple {
            predicate_text: (0..len_pred).map(|i| format!("p{i}")).collect(),
            role: SemanticRole::Arg1,
            argument_text: (0..len_arg).map(|i| format!("a{i}")).collect(),
        }
    }

    fn ctx(speaker: SpeakerId, n: usize) -> ContextUtterance {
        ContextUtterance {
            speaker,
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
        }
    }

    #[test]
    fn triples_from_rewrite_example() {
        let s = DialogueSession::new(
            "s",
            vec![
                Utterance::new(SpeakerId::A, ["需要", "粤语"]),
                Utterance::new(SpeakerId::B, ["粤语", "是", "普通话", "吗"]),
                Utterance::new(SpeakerId::A, ["不算", "吧"]),
            ],
            vec![],
            None,
        )
        .unwrap();
        let f = Frame::new(Span::new(2, 0, 1))
            .with_argument(SemanticRole::Arg1, Span::new(1, 2, 3))
            .with_argument(SemanticRole::Arg0, Span::new(1, 0, 1));
        let t = extract_triples(&s, &[f.clone()], 0).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].tokens(), ["不算", "ARG0", "粤语"]);
        assert_eq!(t[1].tokens(), ["不算", "ARG1", "普通话"]);
        assert!(extract_triples(&s, &[], 0).unwrap().is_empty());
        assert_eq!(extract_triples(&s, &[f.clone()], 9).unwrap(), extract_triples(&s, &[f], 9).unwrap());
    }

    #[test]
    fn length_arithmetic() {
        let t3 = triple(1, 1);
        let t4 = triple(1, 2);
        let resp = vec!["r0".to_string(), "r1".to_string()];
        let opts = MaskOptions::default();
        let lin = linearize(&[t3, t4], &[ctx(SpeakerId::B, 5)], Some(&resp), &opts, SpeakerId::A).unwrap();
        assert_eq!(lin.len(), 16);
        assert_eq!(lin.region_len(Region::Z), 7);
        assert_eq!(lin.region_len(Region::C), 6);
        assert_eq!(lin.region_len(Region::R), 3);
        assert_eq!(&lin.positions[..7], &[0, 1, 2, 0, 1, 2, 3]);
        assert_eq!(&lin.positions[7..13], &[0, 1, 2, 3, 4, 5]);
        assert_eq!(&lin.positions[13..], &[0, 1, 2]);
        assert_eq!(lin.tokens[12], EOS);
        assert_eq!(lin.tokens[13], BOS);
        assert!(lin.segments[7..13].iter().all(|s| *s == SegmentType::OtherSpeaker));
        assert!(lin.segments[13..].iter().all(|s| *s == SegmentType::SameSpeaker));

        let bi = linearize(&[triple(1, 1), triple(1, 2)], &[ctx(SpeakerId::B, 5)], None, &MaskOptions::with_kind(MaskKind::Bi), SpeakerId::A).unwrap();
        assert_eq!(&bi.positions[..7], &[0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn no_triples_and_errors() {
        let lin = linearize(&[], &[ctx(SpeakerId::A, 2)], None, &MaskOptions::default(), SpeakerId::A).unwrap();
        assert_eq!(lin.region_len(Region::Z), 0);
        assert_eq!(lin.len(), 4);
        assert_eq!(
            linearize(&[], &[], None, &MaskOptions::default(), SpeakerId::A).unwrap_err(),
            LinearizeError::EmptyContext
        );
        let bad = ContextUtterance { speaker: SpeakerId::A, tokens: vec![EOS.to_string()] };
        assert!(matches!(
            linearize(&[], &[bad], None, &MaskOptions::default(), SpeakerId::A),
            Err(LinearizeError::ReservedToken(_))
        ));
    }

    /// Z region only, with the given triple lengths.
    fn z_only(lengths: &[usize]) -> LinearizedInput {
        let triple_index: Vec<Option<usize>> = lengths
            .iter()
            .enumerate()
            .flat_map(|(t, &n)| std::iter::repeat_n(Some(t), n))
            .collect();
        let n = triple_index.len();
        LinearizedInput {
            tokens: vec!["x".into(); n],
            segments: vec![SegmentType::Srl; n],
            positions: vec![0; n],
            regions: vec![Region::Z; n],
            triple_index,
            utterance_index: vec![None; n],
            options: MaskOptions::default(),
            mask: Array2::from_elem((0, 0), false),
        }
    }

    #[test]
    fn triple_mask_blocks() {
        let one = linearize(&[triple(1, 1)], &[ctx(SpeakerId::A, 1)], None, &MaskOptions::default(), SpeakerId::A).unwrap();
        assert!(one.mask.slice(ndarray::s![0..3, 0..3]).iter().all(|v| *v));

        let mask = build_mask(&z_only(&[2, 3]), &MaskOptions::default());
        assert_eq!(mask.iter().filter(|v| !**v).count(), 12);
        assert!(mask.slice(ndarray::s![0..2, 0..2]).iter().all(|v| *v));
        assert!(mask.slice(ndarray::s![2..5, 2..5]).iter().all(|v| *v));

        let bi = build_mask(&z_only(&[2, 3]), &MaskOptions::with_kind(MaskKind::Bi));
        assert!(bi.iter().all(|v| *v));

        let lin = linearize(&[triple(1, 1), triple(1, 2)], &[ctx(SpeakerId::A, 1)], None, &MaskOptions::default(), SpeakerId::A).unwrap();
        let z = lin.mask.slice(ndarray::s![0..7, 0..7]);
        assert_eq!(z.iter().filter(|v| !**v).count(), 24);
        // Z never sees C or R
        assert!(lin.mask.slice(ndarray::s![0..7, 7..]).iter().all(|v| !*v));
    }

    #[test]
    fn response_is_causal_and_rle_round_trips() {
        let resp: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let lin = linearize(&[triple(1, 1)], &[ctx(SpeakerId::A, 2)], Some(&resp), &MaskOptions::default(), SpeakerId::A).unwrap();
        let r0 = lin.response_start();
        for i in r0..lin.len() {
            for j in r0..lin.len() {
                assert_eq!(lin.mask[[i, j]], j <= i);
            }
        }
        assert_eq!(mask_from_rle(&mask_rle(&lin.mask)), lin.mask);
        assert_eq!(lin.context_utterances(), vec![vec!["w0".to_string(), "w1".to_string()]]);
        let json = lin.to_json();
        assert_eq!(json["segments"][0], "E_SRL");
        assert_eq!(json["regions"][0], "Z");
    }
}

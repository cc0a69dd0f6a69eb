//! Dialogue data model: sessions, spans, frames and the flattened view with
//! speaker markers that every downstream component works on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DialogueError {
    #[error("reserved marker `{token}` used as a token at turn {turn}, position {position}")]
    ReservedToken {
        turn: usize,
        position: usize,
        token: String,
    },
    #[error("span {span} is out of bounds")]
    OutOfBounds { span: Span },
    #[error("flat range {start}..{end} does not correspond to a span")]
    InvalidRange { start: usize, end: usize },
    #[error("flat index {0} is out of bounds")]
    IndexOutOfBounds(usize),
    #[error("unknown semantic role `{0}`")]
    UnknownRole(String),
    #[error("unknown speaker `{0}`")]
    UnknownSpeaker(String),
    #[error("session `{0}` has no utterances")]
    EmptySession(String),
    #[error("utterance {turn} of session `{session}` has no tokens")]
    EmptyUtterance { session: String, turn: usize },
    #[error("cannot compute statistics over an empty corpus")]
    EmptyCorpus,
}

/// Speaker of a two-party dialogue. The first speaker of a session is `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeakerId {
    A,
    B,
}

impl SpeakerId {
    pub fn index(self) -> usize {
        match self {
            SpeakerId::A => 0,
            SpeakerId::B => 1,
        }
    }

    pub fn other(self) -> SpeakerId {
        match self {
            SpeakerId::A => SpeakerId::B,
            SpeakerId::B => SpeakerId::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerId::A => "A",
            SpeakerId::B => "B",
        }
    }
}

impl FromStr for SpeakerId {
    type Err = DialogueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(SpeakerId::A),
            "B" => Ok(SpeakerId::B),
            other => Err(DialogueError::UnknownSpeaker(other.to_string())),
        }
    }
}

/// The closed inventory of semantic roles, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticRole {
    Arg0,
    Arg1,
    Arg2,
    Arg3,
    Arg4,
    AmTmp,
    AmLoc,
    AmPrp,
    AmNeg,
}

impl SemanticRole {
    pub const ALL: [SemanticRole; 9] = [
        SemanticRole::Arg0,
        SemanticRole::Arg1,
        SemanticRole::Arg2,
        SemanticRole::Arg3,
        SemanticRole::Arg4,
        SemanticRole::AmTmp,
        SemanticRole::AmLoc,
        SemanticRole::AmPrp,
        SemanticRole::AmNeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticRole::Arg0 => "ARG0",
            SemanticRole::Arg1 => "ARG1",
            SemanticRole::Arg2 => "ARG2",
            SemanticRole::Arg3 => "ARG3",
            SemanticRole::Arg4 => "ARG4",
            SemanticRole::AmTmp => "AM-TMP",
            SemanticRole::AmLoc => "AM-LOC",
            SemanticRole::AmPrp => "AM-PRP",
            SemanticRole::AmNeg => "AM-NEG",
        }
    }

    /// Position in [`SemanticRole::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SemanticRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticRole {
    type Err = DialogueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemanticRole::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DialogueError::UnknownRole(s.to_string()))
    }
}

impl Serialize for SemanticRole {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SemanticRole {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A half-open token range inside one turn, or the speaker marker heading
/// that turn (`start == end == 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    pub is_speaker_marker: bool,
}

impl Span {
    pub fn new(turn: usize, start: usize, end: usize) -> Self {
        Span {
            turn,
            start,
            end,
            is_speaker_marker: false,
        }
    }

    pub fn marker(turn: usize) -> Self {
        Span {
            turn,
            start: 0,
            end: 0,
            is_speaker_marker: true,
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_speaker_marker {
            write!(f, "turn {} marker", self.turn)
        } else {
            write!(f, "turn {} [{}, {})", self.turn, self.start, self.end)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new<S: Into<String>>(speaker: SpeakerId, tokens: impl IntoIterator<Item = S>) -> Self {
        Utterance {
            speaker,
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub role: SemanticRole,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub predicate: Span,
    pub arguments: Vec<Argument>,
}

impl Frame {
    pub fn new(predicate: Span) -> Self {
        Frame {
            predicate,
            arguments: Vec::new(),
        }
    }

    pub fn with_argument(mut self, role: SemanticRole, span: Span) -> Self {
        self.arguments.push(Argument { role, span });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub utterances: Vec<Utterance>,
    pub frames: Vec<Frame>,
    pub mentions: Option<Vec<Span>>,
}

impl DialogueSession {
    /// Builds a session, relabelling speakers so that the first utterance is
    /// spoken by `A`.
    pub fn new(
        session_id: impl Into<String>,
        mut utterances: Vec<Utterance>,
        frames: Vec<Frame>,
        mentions: Option<Vec<Span>>,
    ) -> Result<Self, DialogueError> {
        let session_id = session_id.into();
        let first = utterances
            .first()
            .ok_or_else(|| DialogueError::EmptySession(session_id.clone()))?
            .speaker;
        if let Some(turn) = utterances.iter().position(|u| u.tokens.is_empty()) {
            return Err(DialogueError::EmptyUtterance {
                session: session_id,
                turn,
            });
        }
        if first == SpeakerId::B {
            for u in &mut utterances {
                u.speaker = u.speaker.other();
            }
        }
        Ok(DialogueSession {
            session_id,
            utterances,
            frames,
            mentions,
        })
    }

    pub fn turns(&self) -> usize {
        self.utterances.len()
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }
}

/// Reserved literals prefixed to each turn in the flattened dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub a: String,
    pub b: String,
}

impl Default for MarkerSet {
    fn default() -> Self {
        MarkerSet {
            a: "[A]".to_string(),
            b: "[B]".to_string(),
        }
    }
}

impl MarkerSet {
    pub fn text(&self, speaker: SpeakerId) -> &str {
        match speaker {
            SpeakerId::A => &self.a,
            SpeakerId::B => &self.b,
        }
    }

    pub fn is_reserved(&self, token: &str) -> bool {
        token == self.a || token == self.b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatItem {
    pub text: String,
    pub turn: usize,
    pub speaker: SpeakerId,
    pub is_marker: bool,
    /// Position inside the turn segment: the marker is 0, token `i` is `i + 1`.
    pub within_turn_pos: usize,
}

/// The whole session as one stream: `[marker, tokens..]` per turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatDialogue {
    pub session_id: String,
    pub items: Vec<FlatItem>,
    /// Flat index of each turn's marker.
    turn_offsets: Vec<usize>,
}

pub fn flatten(session: &DialogueSession) -> Result<FlatDialogue, DialogueError> {
    flatten_with(session, &MarkerSet::default())
}

pub fn flatten_with(
    session: &DialogueSession,
    markers: &MarkerSet,
) -> Result<FlatDialogue, DialogueError> {
    let mut items = Vec::with_capacity(session.token_count() + session.turns());
    let mut turn_offsets = Vec::with_capacity(session.turns());
    for (turn, utt) in session.utterances.iter().enumerate() {
        turn_offsets.push(items.len());
        items.push(FlatItem {
            text: markers.text(utt.speaker).to_string(),
            turn,
            speaker: utt.speaker,
            is_marker: true,
            within_turn_pos: 0,
        });
        for (position, token) in utt.tokens.iter().enumerate() {
            if markers.is_reserved(token) {
                return Err(DialogueError::ReservedToken {
                    turn,
                    position,
                    token: token.clone(),
                });
            }
            items.push(FlatItem {
                text: token.clone(),
                turn,
                speaker: utt.speaker,
                is_marker: false,
                within_turn_pos: position + 1,
            });
        }
    }
    Ok(FlatDialogue {
        session_id: session.session_id.clone(),
        items,
        turn_offsets,
    })
}

impl FlatDialogue {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn turns(&self) -> usize {
        self.turn_offsets.len()
    }

    pub fn turn_offset(&self, turn: usize) -> usize {
        self.turn_offsets[turn]
    }

    /// Number of real tokens in `turn` (marker excluded).
    pub fn turn_len(&self, turn: usize) -> usize {
        let next = self
            .turn_offsets
            .get(turn + 1)
            .copied()
            .unwrap_or(self.items.len());
        next - self.turn_offsets[turn] - 1
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|it| it.text.as_str())
    }

    /// Drops markers and regroups by turn.
    pub fn utterance_tokens(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.turns()];
        for it in self.items.iter().filter(|it| !it.is_marker) {
            out[it.turn].push(it.text.clone());
        }
        out
    }

    pub fn flat_index(&self, span: &Span) -> Result<(usize, usize), DialogueError> {
        if span.turn >= self.turns() {
            return Err(DialogueError::OutOfBounds { span: *span });
        }
        let offset = self.turn_offsets[span.turn];
        if span.is_speaker_marker {
            if span.start != 0 || span.end != 0 {
                return Err(DialogueError::OutOfBounds { span: *span });
            }
            return Ok((offset, offset + 1));
        }
        if span.start >= span.end || span.end > self.turn_len(span.turn) {
            return Err(DialogueError::OutOfBounds { span: *span });
        }
        Ok((offset + 1 + span.start, offset + 1 + span.end))
    }

    pub fn span_of(&self, start: usize, end: usize) -> Result<Span, DialogueError> {
        let invalid = DialogueError::InvalidRange { start, end };
        if start >= end || end > self.items.len() {
            return Err(invalid);
        }
        let first = &self.items[start];
        if first.is_marker {
            return if end == start + 1 {
                Ok(Span::marker(first.turn))
            } else {
                Err(invalid)
            };
        }
        let last = &self.items[end - 1];
        if last.turn != first.turn {
            return Err(invalid);
        }
        Ok(Span::new(
            first.turn,
            first.within_turn_pos - 1,
            last.within_turn_pos,
        ))
    }

    pub fn turn_distance(&self, predicate: &Span, item_index: usize) -> Result<i64, DialogueError> {
        if predicate.turn >= self.turns() {
            return Err(DialogueError::OutOfBounds { span: *predicate });
        }
        let item = self
            .items
            .get(item_index)
            .ok_or(DialogueError::IndexOutOfBounds(item_index))?;
        Ok(predicate.turn as i64 - item.turn as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Locality {
    Intra,
    Cross,
}

/// Speaker-marker arguments count by the turn their marker heads.
pub fn classify_argument(frame: &Frame, role_span: &Span) -> Locality {
    if role_span.turn == frame.predicate.turn {
        Locality::Intra
    } else {
        Locality::Cross
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Argument in a later turn than its predicate.
    FutureArgument,
    /// Two spans of one frame share a flat position.
    Overlap,
    OutOfBounds,
    /// A lone speaker name used where the speaker marker is required.
    SpeakerNotMarker,
    /// One role realized by several spans.
    DuplicateRole,
    /// The predicate points at a speaker marker.
    MarkerPredicate,
    /// A reserved marker literal appears as a token.
    ReservedToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub session_id: String,
    /// `None` for session-level violations.
    pub frame: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

pub fn validate_session(session: &DialogueSession) -> Vec<Violation> {
    validate_session_with(session, &MarkerSet::default())
}

pub fn validate_session_with(session: &DialogueSession, markers: &MarkerSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let violation = |frame: Option<usize>, kind, detail: String| Violation {
        session_id: session.session_id.clone(),
        frame,
        kind,
        detail,
    };
    let flat = match flatten_with(session, markers) {
        Ok(flat) => flat,
        Err(e) => {
            out.push(violation(None, ViolationKind::ReservedToken, e.to_string()));
            return out;
        }
    };
    if let Some(mentions) = &session.mentions {
        for m in mentions {
            if m.is_speaker_marker || flat.flat_index(m).is_err() {
                out.push(violation(
                    None,
                    ViolationKind::OutOfBounds,
                    format!("mention {m}"),
                ));
            }
        }
    }
    for (fi, frame) in session.frames.iter().enumerate() {
        let mut ranges: Vec<(String, (usize, usize))> = Vec::new();
        if frame.predicate.is_speaker_marker {
            out.push(violation(
                Some(fi),
                ViolationKind::MarkerPredicate,
                format!("predicate {}", frame.predicate),
            ));
        }
        match flat.flat_index(&frame.predicate) {
            Ok(r) => ranges.push(("predicate".to_string(), r)),
            Err(_) => out.push(violation(
                Some(fi),
                ViolationKind::OutOfBounds,
                format!("predicate {}", frame.predicate),
            )),
        }
        let mut seen_roles = Vec::new();
        for arg in &frame.arguments {
            if seen_roles.contains(&arg.role) {
                out.push(violation(
                    Some(fi),
                    ViolationKind::DuplicateRole,
                    format!("{} realized more than once", arg.role),
                ));
            }
            seen_roles.push(arg.role);
            if arg.span.turn > frame.predicate.turn {
                out.push(violation(
                    Some(fi),
                    ViolationKind::FutureArgument,
                    format!(
                        "{} at {} follows predicate turn {}",
                        arg.role, arg.span, frame.predicate.turn
                    ),
                ));
            }
            match flat.flat_index(&arg.span) {
                Ok(r) => {
                    if !arg.span.is_speaker_marker && r.1 == r.0 + 1 {
                        let text = &flat.items[r.0].text;
                        if text == SpeakerId::A.as_str() || text == SpeakerId::B.as_str() {
                            out.push(violation(
                                Some(fi),
                                ViolationKind::SpeakerNotMarker,
                                format!("{} at {} is the bare speaker name `{text}`", arg.role, arg.span),
                            ));
                        }
                    }
                    ranges.push((arg.role.to_string(), r));
                }
                Err(_) => out.push(violation(
                    Some(fi),
                    ViolationKind::OutOfBounds,
                    format!("{} at {}", arg.role, arg.span),
                )),
            }
        }
        for i in 0..ranges.len() {
            for j in i + 1..ranges.len() {
                let (a, ra) = &ranges[i];
                let (b, rb) = &ranges[j];
                if ra.0 < rb.1 && rb.0 < ra.1 {
                    out.push(violation(
                        Some(fi),
                        ViolationKind::Overlap,
                        format!("{a} overlaps {b}"),
                    ));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub role_proportion: BTreeMap<SemanticRole, f64>,
    pub role_cross_ratio: BTreeMap<SemanticRole, f64>,
    pub cross_argument_ratio: f64,
    pub speaker_argument_ratio: f64,
    pub avg_turns: f64,
    pub avg_tokens: f64,
    pub argument_count: usize,
    pub predicate_count: usize,
    pub utterance_count: usize,
    pub session_count: usize,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Corpus statistics; all ratios are percentages.
pub fn compute_stats(sessions: &[DialogueSession]) -> Result<DatasetStats, DialogueError> {
    if sessions.is_empty() {
        return Err(DialogueError::EmptyCorpus);
    }
    let mut per_role = [(0usize, 0usize); 9];
    let (mut args, mut cross, mut speaker, mut predicates) = (0, 0, 0, 0);
    let (mut utterances, mut tokens) = (0, 0);
    for s in sessions {
        utterances += s.turns();
        tokens += s.token_count();
        predicates += s.frames.len();
        for frame in &s.frames {
            for arg in &frame.arguments {
                args += 1;
                let slot = &mut per_role[arg.role.index()];
                slot.0 += 1;
                if classify_argument(frame, &arg.span) == Locality::Cross {
                    cross += 1;
                    slot.1 += 1;
                }
                if arg.span.is_speaker_marker {
                    speaker += 1;
                }
            }
        }
    }
    let role_proportion = SemanticRole::ALL
        .iter()
        .map(|r| (*r, percent(per_role[r.index()].0, args)))
        .collect();
    let role_cross_ratio = SemanticRole::ALL
        .iter()
        .map(|r| {
            let (n, c) = per_role[r.index()];
            (*r, percent(c, n))
        })
        .collect();
    let n = sessions.len() as f64;
    Ok(DatasetStats {
        role_proportion,
        role_cross_ratio,
        cross_argument_ratio: percent(cross, args),
        speaker_argument_ratio: percent(speaker, args),
        avg_turns: utterances as f64 / n,
        avg_tokens: tokens as f64 / n,
        argument_count: args,
        predicate_count: predicates,
        utterance_count: utterances,
        session_count: sessions.len(),
    })
}

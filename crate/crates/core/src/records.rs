//! JSONL session records: one dialogue per line, within-turn end-exclusive
//! indices. Fields this crate does not know about are carried through
//! untouched.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dialogue::{Argument, DialogueError, DialogueSession, Frame, SemanticRole, Span, SpeakerId, Utterance};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: DialogueError },
    #[error("no records")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub speaker: SpeakerId,
    pub tokens: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentRecord {
    pub role: SemanticRole,
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_speaker_marker: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub predicate: SpanRecord,
    #[serde(default)]
    pub arguments: Vec<ArgumentRecord>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub turns: Vec<TurnRecord>,
    #[serde(default)]
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<SpanRecord>>,
    /// Target rewrite of the last turn, used by the rewriting demonstrator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl From<SpanRecord> for Span {
    fn from(s: SpanRecord) -> Span {
        Span::new(s.turn, s.start, s.end)
    }
}

impl From<Span> for SpanRecord {
    fn from(s: Span) -> SpanRecord {
        SpanRecord {
            turn: s.turn,
            start: s.start,
            end: s.end,
        }
    }
}

impl From<&Frame> for FrameRecord {
    fn from(f: &Frame) -> FrameRecord {
        FrameRecord {
            predicate: f.predicate.into(),
            arguments: f
                .arguments
                .iter()
                .map(|a| ArgumentRecord {
                    role: a.role,
                    turn: a.span.turn,
                    start: a.span.start,
                    end: a.span.end,
                    is_speaker_marker: a.span.is_speaker_marker,
                    extra: Map::new(),
                })
                .collect(),
            extra: Map::new(),
        }
    }
}

impl FrameRecord {
    pub fn to_frame(&self) -> Frame {
        Frame {
            predicate: self.predicate.into(),
            arguments: self
                .arguments
                .iter()
                .map(|a| Argument {
                    role: a.role,
                    span: Span {
                        turn: a.turn,
                        start: a.start,
                        end: a.end,
                        is_speaker_marker: a.is_speaker_marker,
                    },
                })
                .collect(),
        }
    }
}

impl SessionRecord {
    pub fn to_session(&self) -> Result<DialogueSession, DialogueError> {
        DialogueSession::new(
            self.session_id.clone(),
            self.turns
                .iter()
                .map(|t| Utterance::new(t.speaker, t.tokens.iter().cloned()))
                .collect(),
            self.frames.iter().map(FrameRecord::to_frame).collect(),
            self.mentions
                .as_ref()
                .map(|m| m.iter().map(|&s| s.into()).collect()),
        )
    }

    pub fn from_session(session: &DialogueSession) -> SessionRecord {
        SessionRecord {
            session_id: session.session_id.clone(),
            turns: session
                .utterances
                .iter()
                .map(|u| TurnRecord {
                    speaker: u.speaker,
                    tokens: u.tokens.clone(),
                    extra: Map::new(),
                })
                .collect(),
            frames: session.frames.iter().map(FrameRecord::from).collect(),
            mentions: session
                .mentions
                .as_ref()
                .map(|m| m.iter().map(|&s| s.into()).collect()),
            rewrite: None,
            extra: Map::new(),
        }
    }
}

/// Parses JSONL, skipping blank lines. Line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<SessionRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| RecordError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses JSONL into sessions; structural errors carry the line number.
pub fn parse_sessions(text: &str) -> Result<Vec<(SessionRecord, DialogueSession)>, RecordError> {
    let mut out = Vec::new();
    let mut line = 0;
    for raw in text.lines() {
        line += 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: SessionRecord = serde_json::from_str(raw).map_err(|e| RecordError::Parse {
            line,
            message: e.to_string(),
        })?;
        let session = rec.to_session().map_err(|source| RecordError::Invalid { line, source })?;
        out.push((rec, session));
    }
    if out.is_empty() {
        return Err(RecordError::Empty);
    }
    Ok(out)
}

pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a SessionRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Seeded 80/10/10 partition over a hash of the session id.
pub fn split_of(session_id: &str, seed: u64) -> Split {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(session_id.as_bytes());
    let digest = h.finalize();
    let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % 100;
    match bucket {
        0..80 => Split::Train,
        80..90 => Split::Dev,
        _ => Split::Test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"session_id":"s0","turns":[{"speaker":"A","tokens":["需要","粤语"]},{"speaker":"B","tokens":["不算","吧"],"emotion":"calm"}],"frames":[{"predicate":{"turn":1,"start":0,"end":1},"arguments":[{"role":"ARG0","turn":1,"start":0,"end":0,"is_speaker_marker":true},{"role":"ARG1","turn":0,"start":1,"end":2}]}],"source":"toy"}"#;

    #[test]
    fn round_trip_preserves_unknown_fields() {
        let recs = parse_jsonl(LINE).unwrap();
        assert_eq!(recs[0].extra["source"], "toy");
        assert_eq!(recs[0].turns[1].extra["emotion"], "calm");
        let again = to_jsonl(&recs);
        assert_eq!(parse_jsonl(&again).unwrap(), recs);
        let a: Value = serde_json::from_str(LINE).unwrap();
        let b: Value = serde_json::from_str(again.trim()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn session_conversion() {
        let (_, s) = parse_sessions(LINE).unwrap().remove(0);
        assert_eq!(s.frames[0].arguments[0].span, Span::marker(1));
        assert_eq!(s.frames[0].arguments[1].span, Span::new(0, 1, 2));
        let back = SessionRecord::from_session(&s);
        assert_eq!(back.frames, parse_jsonl(LINE).unwrap()[0].frames);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = format!("{LINE}\n\n{{not json\n");
        match parse_jsonl(&text) {
            Err(RecordError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_sessions(""), Err(RecordError::Empty)));
        let empty_turn = r#"{"session_id":"x","turns":[{"speaker":"A","tokens":[]}]}"#;
        assert!(matches!(parse_sessions(empty_turn), Err(RecordError::Invalid { line: 1, .. })));
    }

    #[test]
    fn split_is_seeded_and_roughly_balanced() {
        let ids: Vec<String> = (0..2000).map(|i| format!("session-{i}")).collect();
        let count = |seed, want| ids.iter().filter(|id| split_of(id, seed) == want).count();
        let train = count(0, Split::Train);
        assert!((1500..1700).contains(&train), "{train}");
        assert!((120..280).contains(&count(0, Split::Dev)));
        assert_eq!(split_of("abc", 3), split_of("abc", 3));
        assert!(ids.iter().any(|id| split_of(id, 0) != split_of(id, 1)));
    }
}

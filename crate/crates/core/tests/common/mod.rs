#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use csrl_core::dialogue::{DialogueSession, Frame, SemanticRole, Span, SpeakerId, Utterance};

pub const WORDS: &[&str] = &["需要", "粤语", "不算", "吧", "是", "普通话", "吗", "电影", "看", "好", "x", "y"];

pub fn random_session<R: Rng>(rng: &mut R, id: &str) -> DialogueSession {
    let turns = rng.random_range(1..=6);
    let mut speaker = SpeakerId::A;
    let utterances = (0..turns)
        .map(|_| {
            let len = rng.random_range(1..=6);
            let u = Utterance::new(speaker, (0..len).map(|_| *WORDS.choose(rng).unwrap()));
            if rng.random_bool(0.8) {
                speaker = speaker.other();
            }
            u
        })
        .collect();
    DialogueSession::new(id, utterances, vec![], None).unwrap()
}

/// A frame with distinct roles and pairwise disjoint spans, arguments
/// anywhere in the session.
pub fn random_frame<R: Rng>(rng: &mut R, session: &DialogueSession) -> Frame {
    let turn = rng.random_range(0..session.turns());
    let pos = rng.random_range(0..session.utterances[turn].tokens.len());
    let predicate = Span::new(turn, pos, pos + 1);
    let mut taken: HashSet<(usize, Option<usize>)> = HashSet::new();
    taken.insert((turn, Some(pos)));
    let mut frame = Frame::new(predicate);
    let mut roles = SemanticRole::ALL.to_vec();
    let wanted = rng.random_range(0..=4);
    for _ in 0..wanted {
        let idx = rng.random_range(0..roles.len());
        let role = roles.swap_remove(idx);
        let t = rng.random_range(0..session.turns());
        let span = if rng.random_bool(0.2) {
            Span::marker(t)
        } else {
            let len = session.utterances[t].tokens.len();
            let start = rng.random_range(0..len);
            let end = rng.random_range(start + 1..=len);
            Span::new(t, start, end)
        };
        let cells: Vec<(usize, Option<usize>)> = if span.is_speaker_marker {
            vec![(t, None)]
        } else {
            (span.start..span.end).map(|p| (t, Some(p))).collect()
        };
        if cells.iter().any(|c| taken.contains(c)) {
            continue;
        }
        taken.extend(cells);
        frame = frame.with_argument(role, span);
    }
    frame
}

/// Flat range computed directly from turn lengths.
pub fn flat_range(session: &DialogueSession, span: &Span) -> (usize, usize) {
    let offset: usize = session.utterances[..span.turn].iter().map(|u| u.tokens.len() + 1).sum();
    if span.is_speaker_marker {
        (offset, offset + 1)
    } else {
        (offset + 1 + span.start, offset + 1 + span.end)
    }
}

//! Conversational semantic role labeling.
//!
//! Predicate-argument frames over whole multi-turn dialogues: the dialogue
//! data model ([`dialogue`]), the BIO codec ([`tags`]), a trainable
//! cross-turn tagger ([`model`]), evaluation ([`metrics`]), and the
//! predicate-argument linearization used to condition rewriting and
//! response generation ([`linearize`], [`rewriter`]).

pub mod config;
pub mod dialogue;
pub mod linearize;
pub mod metrics;
pub mod model;
pub mod records;
pub mod rewriter;
pub mod synthetic;
pub mod tags;

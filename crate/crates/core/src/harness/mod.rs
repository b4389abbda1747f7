// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-circuit test harness: vocabulary, scenes, model construction,
//! corpus files and evaluation.

mod corpus;
mod eval;
mod planted;
mod records;
mod vocab;

pub use corpus::{generate_corpus, Answer, CorpusEntry, QueryPair, SceneParams, SyntheticScene};
pub use eval::{
    evaluate, generate_mentions, mention_summary, sweep, EvalRecord, EvalResult, MentionSummary,
    MentionTrace, SweepCell, SweepTable,
};
pub use planted::{
    build_planted_model, CircuitParams, PlantedModelSpec, DEFAULT_MAX_SEQ_LEN, DEFAULT_NUM_PLANTED,
    DEFAULT_STRENGTH,
};
pub use records::{load_corpus, parse_corpus_jsonl, read_corpus_jsonl, write_corpus_jsonl, CorpusRecord};
pub use vocab::{default_caption_candidates, VocabSpec};

/// Token ids of the fixed words.
pub mod tokens {
    pub use super::vocab::{DESCRIBE, IMAGE, IS, MARKER, NUM_WORDS, QMARK, SCENE, THE, THERE, WHAT};
}

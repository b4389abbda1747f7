// SPDX-License-Identifier: MIT OR Apache-2.0

//! Presence-question evaluation, alpha/K sweeps and mention generation.

use crate::error::{config, Error, Result};
use crate::intervention::{build_gate, intervened_forward, InterventionConfig};
use crate::model::{forward, CaptureFlags, DecoderWeights, SequenceInput, ShiftPositions};
use crate::probe::ProbeArtifact;
use crate::report::{csv_string, sig9};

use super::corpus::CorpusEntry;
use super::vocab::VocabSpec;

/// One evaluated question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub gold: bool,
    pub predicted: bool,
    pub logit: f64,
}

/// Accuracy, F1 with "yes" as the positive class, and yes-rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub f1: f64,
    pub yes_rate: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalResult {
    /// Scores a list of records. F1 is 0 when there are no true positives.
    ///
    /// # Errors
    ///
    /// [`Error::EmptyDataset`] for no records.
    pub fn from_records(records: Vec<EvalRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("nothing to evaluate".into()));
        }
        let n = records.len() as f64;
        let count = |f: &dyn Fn(&EvalRecord) -> bool| records.iter().filter(|r| f(r)).count();
        let correct = count(&|r| r.gold == r.predicted);
        let tp = count(&|r| r.gold && r.predicted);
        let fp = count(&|r| !r.gold && r.predicted);
        let fn_ = count(&|r| r.gold && !r.predicted);
        let yes = count(&|r| r.predicted);
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        Ok(Self {
            accuracy: correct as f64 / n,
            f1,
            yes_rate: yes as f64 / n,
            records,
        })
    }
}

/// Answers every presence question; "yes" iff the logit is positive.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for an empty corpus, plus forward-pass errors.
pub fn evaluate(
    weights: &DecoderWeights,
    corpus: &[CorpusEntry],
    intervention: Option<&InterventionConfig>,
) -> Result<EvalResult> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset("evaluation corpus is empty".into()));
    }
    let records = corpus
        .iter()
        .map(|e| {
            let input = e.non_caption_input()?;
            let trace = match intervention {
                Some(cfg) => intervened_forward(weights, &input, cfg, CaptureFlags::NONE)?,
                None => forward(weights, &input, CaptureFlags::NONE, None)?,
            };
            let logit = trace.answer_logit();
            Ok(EvalRecord {
                gold: e.query.gold.is_yes(),
                predicted: logit > 0.0,
                logit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_records(records)
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// Result of one `(alpha, k)` setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub k: usize,
    pub result: EvalResult,
}

/// All cells of a sweep, alpha-major in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// Cell with the highest accuracy; the earliest on ties.
    pub fn argmax(&self) -> &SweepCell {
        let mut best = &self.cells[0];
        for c in &self.cells[1..] {
            if c.result.accuracy > best.result.accuracy {
                best = c;
            }
        }
        best
    }

    pub fn get(&self, alpha: f64, k: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.k == k)
    }

    /// `alpha,k,accuracy,f1,yes_rate`, one row per cell.
    ///
    /// # Errors
    ///
    /// Only on writer failure.
    pub fn to_csv(&self) -> Result<String> {
        csv_string(
            &["alpha", "k", "accuracy", "f1", "yes_rate"],
            self.cells.iter().map(|c| {
                vec![
                    sig9(c.alpha),
                    c.k.to_string(),
                    sig9(c.result.accuracy),
                    sig9(c.result.f1),
                    sig9(c.result.yes_rate),
                ]
            }),
        )
    }
}

/// Evaluates every `(alpha, k)` pair using the artifact's ranking.
///
/// # Errors
///
/// [`Error::Config`] for an empty grid or a negative `k`,
/// [`Error::Provenance`] when the artifact was probed on other weights,
/// plus evaluation errors.
pub fn sweep(
    weights: &DecoderWeights,
    corpus: &[CorpusEntry],
    artifact: &ProbeArtifact,
    alpha_grid: &[f64],
    k_grid: &[i64],
    positions: ShiftPositions,
) -> Result<SweepTable> {
    if alpha_grid.is_empty() || k_grid.is_empty() {
        return Err(config("sweep grids must be non-empty"));
    }
    if artifact.model_hash != weights.model_hash() {
        return Err(Error::Provenance(
            "probe artifact was produced for different weights".into(),
        ));
    }
    let bank = artifact.bank()?;
    let mut cells = Vec::with_capacity(alpha_grid.len() * k_grid.len());
    for &alpha in alpha_grid {
        for &k in k_grid {
            let ranking = artifact.ranking(Some(k))?;
            let cfg = build_gate(&ranking, &bank, alpha)?.with_positions(positions);
            cells.push(SweepCell {
                alpha,
                k: ranking.k(),
                result: evaluate(weights, corpus, Some(&cfg))?,
            });
        }
    }
    Ok(SweepTable { cells })
}

// ---------------------------------------------------------------------------
// Mention generation
// ---------------------------------------------------------------------------

/// Objects named by repeated single-step decoding after a caption query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionTrace {
    pub mentioned: Vec<usize>,
    pub hallucinated: usize,
}

/// Emulates open captioning with the binary readout.
///
/// Each step scores every unmentioned object by asking the presence
/// question after the tokens so far, appends the best-scoring object if its
/// logit is positive, and stops otherwise or when the sequence budget runs
/// out. The intervention, if any, applies at every step's last position.
/// This is a qualitative stand-in for caption hallucination counts.
///
/// # Errors
///
/// Forward-pass errors.
pub fn generate_mentions(
    weights: &DecoderWeights,
    entry: &CorpusEntry,
    vocab: &VocabSpec,
    max_mentions: usize,
    intervention: Option<&InterventionConfig>,
) -> Result<MentionTrace> {
    let visual = entry.scene.embeddings();
    let budget = weights.config().max_seq_len;
    let mut tokens = entry.query.caption.clone();
    let mut mentioned = Vec::new();
    while mentioned.len() < max_mentions {
        if visual.rows() + tokens.len() + 5 > budget {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for o in (0..vocab.num_objects).filter(|o| !mentioned.contains(o)) {
            let mut q = tokens.clone();
            q.extend(vocab.presence_question(o));
            let input = SequenceInput::new(visual.clone(), q)?;
            let logit = match intervention {
                Some(cfg) => intervened_forward(weights, &input, cfg, CaptureFlags::NONE)?,
                None => forward(weights, &input, CaptureFlags::NONE, None)?,
            }
            .answer_logit();
            if best.is_none_or(|(_, b)| logit > b) {
                best = Some((o, logit));
            }
        }
        match best {
            Some((o, logit)) if logit > 0.0 => {
                mentioned.push(o);
                tokens.push(vocab.object_token(o));
            }
            _ => break,
        }
    }
    let hallucinated = mentioned.iter().filter(|&&o| !entry.scene.contains(o)).count();
    Ok(MentionTrace {
        mentioned,
        hallucinated,
    })
}

/// Corpus-level hallucination summary of [`generate_mentions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MentionSummary {
    /// Hallucinated mentions over all mentions.
    pub instance_rate: f64,
    /// Scenes with at least one hallucination over all scenes.
    pub scene_rate: f64,
    pub mentions_per_scene: f64,
}

/// Runs [`generate_mentions`] on every entry.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for an empty corpus, plus forward-pass errors.
pub fn mention_summary(
    weights: &DecoderWeights,
    corpus: &[CorpusEntry],
    vocab: &VocabSpec,
    max_mentions: usize,
    intervention: Option<&InterventionConfig>,
) -> Result<MentionSummary> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset("mention corpus is empty".into()));
    }
    let (mut mentions, mut bad, mut bad_scenes) = (0, 0, 0);
    for e in corpus {
        let t = generate_mentions(weights, e, vocab, max_mentions, intervention)?;
        mentions += t.mentioned.len();
        bad += t.hallucinated;
        bad_scenes += usize::from(t.hallucinated > 0);
    }
    Ok(MentionSummary {
        instance_rate: if mentions == 0 {
            0.0
        } else {
            bad as f64 / mentions as f64
        },
        scene_rate: bad_scenes as f64 / corpus.len() as f64,
        mentions_per_scene: mentions as f64 / corpus.len() as f64,
    })
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Caption query selection by minimal attention shift.
//!
//! Caption and non-caption queries differ in length, so the shift is
//! measured on the last token's attention over the `m` visual positions
//! only, summed over every head. The candidate whose total shift over the
//! batch is smallest wins; ties go to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::model::{forward, CaptureFlags, DecoderWeights, ForwardTrace, SequenceInput};
use crate::report::{csv_string, sig9};
use crate::tensor::Matrix;

/// How a restricted attention difference is reduced to a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Sum of absolute differences.
    #[default]
    L1,
    /// Plain sum of differences; caption minus non-caption.
    Signed,
}

/// Candidate caption queries with display labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryCandidateSet {
    candidates: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl QueryCandidateSet {
    /// # Errors
    ///
    /// [`Error::EmptyDataset`] for no candidates, [`Error::Config`] for an
    /// empty candidate or a label count mismatch.
    pub fn new(candidates: Vec<Vec<usize>>, labels: Vec<String>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyDataset("no query candidates".into()));
        }
        if labels.len() != candidates.len() {
            return Err(config(format!(
                "{} labels for {} candidates",
                labels.len(),
                candidates.len()
            )));
        }
        if let Some(j) = candidates.iter().position(Vec::is_empty) {
            return Err(config(format!("candidate {j} is empty")));
        }
        Ok(Self { candidates, labels })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Per-sample and aggregate shifts for every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftScore {
    per_sample: Vec<Vec<f64>>,
    aggregate: Vec<f64>,
}

impl ShiftScore {
    /// Builds a score from `per_sample[j][b]`.
    pub fn from_per_sample(per_sample: Vec<Vec<f64>>) -> Self {
        let aggregate = per_sample.iter().map(|s| s.iter().sum()).collect();
        Self {
            per_sample,
            aggregate,
        }
    }

    /// `per_sample()[j][b]` is candidate `j` on sample `b`.
    pub fn per_sample(&self) -> &[Vec<f64>] {
        &self.per_sample
    }

    pub fn aggregate(&self) -> &[f64] {
        &self.aggregate
    }

    /// Index of the smallest aggregate; lowest index on ties.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.aggregate.iter().enumerate() {
            if v < self.aggregate[best] {
                best = j;
            }
        }
        best
    }

    /// `candidate_index,label,aggregate_shift`, ascending by shift.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] if `candidates` has a different length.
    pub fn to_csv(&self, candidates: &QueryCandidateSet) -> Result<String> {
        if candidates.len() != self.aggregate.len() {
            return Err(shape("candidate set does not match the score"));
        }
        let mut order: Vec<usize> = (0..self.aggregate.len()).collect();
        order.sort_by(|&a, &b| self.aggregate[a].total_cmp(&self.aggregate[b]).then(a.cmp(&b)));
        csv_string(
            &["candidate_index", "label", "aggregate_shift"],
            order.into_iter().map(|j| {
                vec![
                    j.to_string(),
                    candidates.labels[j].clone(),
                    sig9(self.aggregate[j]),
                ]
            }),
        )
    }
}

/// Shift between two restricted attention rows.
pub fn row_shift(caption: &[f64], non_caption: &[f64], mode: ShiftMode) -> f64 {
    let diffs = caption.iter().zip(non_caption).map(|(a, b)| a - b);
    match mode {
        ShiftMode::L1 => diffs.map(f64::abs).sum(),
        ShiftMode::Signed => diffs.sum(),
    }
}

/// Total shift over all heads of the last-token visual attention.
///
/// # Errors
///
/// [`Error::Shape`] when the traces disagree on `m` or `m` does not match
/// them; [`Error::Config`] when attention was not captured.
pub fn attention_shift(
    caption: &ForwardTrace,
    non_caption: &ForwardTrace,
    m: usize,
    mode: ShiftMode,
) -> Result<f64> {
    if caption.visual_len() != m || non_caption.visual_len() != m {
        return Err(shape(format!(
            "visual lengths {} and {} do not both equal {m}",
            caption.visual_len(),
            non_caption.visual_len()
        )));
    }
    let (ca, na) = (attention(caption)?, attention(non_caption)?);
    if !ca.same_shape(na) {
        return Err(shape("traces come from different model shapes"));
    }
    let (lc, ln) = (caption.seq_len() - 1, non_caption.seq_len() - 1);
    Ok(ca
        .iter()
        .map(|(id, a)| row_shift(&a.row(lc)[..m], &na.get(id).row(ln)[..m], mode))
        .sum())
}

fn attention(trace: &ForwardTrace) -> Result<&crate::grid::HeadGrid<Matrix>> {
    trace
        .attention()
        .ok_or_else(|| config("trace was captured without attention weights"))
}

/// Scores every candidate over the batch and returns the best index.
///
/// `non_caption[b]` is the baseline query for `images[b]`.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for an empty batch, [`Error::Pairing`] when
/// images and queries differ in count, plus forward-pass errors.
pub fn best_query_search(
    weights: &DecoderWeights,
    images: &[Matrix],
    non_caption: &[Vec<usize>],
    candidates: &QueryCandidateSet,
    mode: ShiftMode,
) -> Result<(usize, ShiftScore)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset(
            "query search needs at least one image".into(),
        ));
    }
    if images.len() != non_caption.len() {
        return Err(Error::Pairing(format!(
            "{} images but {} non-caption queries",
            images.len(),
            non_caption.len()
        )));
    }
    let mut per_sample = vec![Vec::with_capacity(images.len()); candidates.len()];
    for (img, non) in images.iter().zip(non_caption) {
        let m = img.rows();
        let base = forward(
            weights,
            &SequenceInput::new(img.clone(), non.clone())?,
            CaptureFlags::ATTENTION,
            None,
        )?;
        for (j, cand) in candidates.candidates().iter().enumerate() {
            let cap = forward(
                weights,
                &SequenceInput::new(img.clone(), cand.clone())?,
                CaptureFlags::ATTENTION,
                None,
            )?;
            per_sample[j].push(attention_shift(&cap, &base, m, mode)?);
        }
    }
    let score = ShiftScore::from_per_sample(per_sample);
    Ok((score.best_index(), score))
}

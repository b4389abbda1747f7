// SPDX-License-Identifier: MIT OR Apache-2.0

//! Caption-sensitive head probing.
//!
//! Each head's last-token output is recomputed with every text position
//! masked, so only visual positions are attended. A linear classifier per
//! head separates caption runs from non-caption runs on those masked
//! outputs; its cross-validated accuracy ranks the heads. Shift vectors are
//! the mean unmasked output difference between the paired runs.

mod artifact;
mod classifier;

pub use artifact::{ClassifierMeta, ProbeArtifact, RankedHead};
pub use classifier::{
    fold_assignment, train_head_classifier, ClassifierParams, LabeledPoint, LinearSvm, Standardizer,
};

use crate::error::{config, shape, Error, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::model::{forward, CaptureFlags, DecoderWeights, SequenceInput};
use crate::tensor::Vector;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Per-head outputs of `B` caption/non-caption pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    model_hash: String,
    caption_masked: HeadGrid<Vec<Vector>>,
    non_caption_masked: HeadGrid<Vec<Vector>>,
    caption_outputs: HeadGrid<Vec<Vector>>,
    non_caption_outputs: HeadGrid<Vec<Vector>>,
    len: usize,
}

impl ProbeDataset {
    /// Assembles a dataset from per-head sample lists.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] when grids or sample counts disagree, or a vector
    /// is non-finite.
    pub fn from_parts(
        model_hash: String,
        caption_masked: HeadGrid<Vec<Vector>>,
        non_caption_masked: HeadGrid<Vec<Vector>>,
        caption_outputs: HeadGrid<Vec<Vector>>,
        non_caption_outputs: HeadGrid<Vec<Vector>>,
    ) -> Result<Self> {
        let grids = [
            &caption_masked,
            &non_caption_masked,
            &caption_outputs,
            &non_caption_outputs,
        ];
        let len = caption_masked.values().first().map_or(0, Vec::len);
        for g in grids {
            if !g.same_shape(&caption_masked) {
                return Err(shape("probe grids differ in shape"));
            }
            if g.values().iter().any(|s| s.len() != len) {
                return Err(shape("probe heads have different sample counts"));
            }
            if g.values().iter().flatten().any(|v| !v.all_finite()) {
                return Err(shape("probe outputs must be finite"));
            }
        }
        Ok(Self {
            model_hash,
            caption_masked,
            non_caption_masked,
            caption_outputs,
            non_caption_outputs,
            len,
        })
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    /// Number of pairs `B`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_layers(&self) -> usize {
        self.caption_masked.num_layers()
    }

    pub fn num_heads(&self) -> usize {
        self.caption_masked.num_heads()
    }

    pub fn caption_masked(&self) -> &HeadGrid<Vec<Vector>> {
        &self.caption_masked
    }

    pub fn non_caption_masked(&self) -> &HeadGrid<Vec<Vector>> {
        &self.non_caption_masked
    }

    pub fn caption_outputs(&self) -> &HeadGrid<Vec<Vector>> {
        &self.caption_outputs
    }

    pub fn non_caption_outputs(&self) -> &HeadGrid<Vec<Vector>> {
        &self.non_caption_outputs
    }

    /// Labeled masked outputs of one head: caption runs are positive and
    /// both runs of pair `b` share group `b`.
    pub fn points(&self, id: HeadId) -> Vec<LabeledPoint> {
        let cap = self.caption_masked.get(id);
        let non = self.non_caption_masked.get(id);
        cap.iter()
            .zip(non)
            .enumerate()
            .flat_map(|(b, (c, n))| {
                [
                    LabeledPoint {
                        features: c.as_slice().to_vec(),
                        label: true,
                        group: b,
                    },
                    LabeledPoint {
                        features: n.as_slice().to_vec(),
                        label: false,
                        group: b,
                    },
                ]
            })
            .collect()
    }
}

/// Runs every pair through the model and records masked and unmasked
/// last-token outputs for all heads.
///
/// Each pair is `(caption input, non-caption input)`.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for no pairs, [`Error::Pairing`] when a pair's
/// visual prefixes differ, plus forward-pass errors.
pub fn build_probe_dataset(
    weights: &DecoderWeights,
    pairs: &[(SequenceInput, SequenceInput)],
) -> Result<ProbeDataset> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("probe corpus is empty".into()));
    }
    let cfg = weights.config();
    let empty = || HeadGrid::from_fn(cfg.num_layers, cfg.num_heads, |_| Vec::with_capacity(pairs.len()));
    let (mut cm, mut nm, mut co, mut no) = (empty(), empty(), empty(), empty());
    let capture = CaptureFlags {
        masked_outputs: true,
        ..CaptureFlags::NONE
    };
    for (b, (cap, non)) in pairs.iter().enumerate() {
        if cap.visual() != non.visual() {
            return Err(Error::Pairing(format!("pair {b} has different visual prefixes")));
        }
        let tc = forward(weights, cap, capture, None)?;
        let tn = forward(weights, non, capture, None)?;
        let (mc, mn) = (
            tc.masked_last_outputs().expect("captured"),
            tn.masked_last_outputs().expect("captured"),
        );
        for (id, v) in mc.iter() {
            cm.get_mut(id).push(v.clone());
            nm.get_mut(id).push(mn.get(id).clone());
            co.get_mut(id).push(tc.last_outputs().get(id).clone());
            no.get_mut(id).push(tn.last_outputs().get(id).clone());
        }
    }
    ProbeDataset::from_parts(weights.model_hash(), cm, nm, co, no)
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

/// Heads ordered by probe accuracy, with the first `k` selected.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRanking {
    model_hash: String,
    accuracies: HeadGrid<f64>,
    order: Vec<HeadId>,
    k: usize,
}

impl HeadRanking {
    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    /// Tags the ranking with the hash of the model it was probed on.
    pub fn with_model_hash(mut self, hash: impl Into<String>) -> Self {
        self.model_hash = hash.into();
        self
    }

    pub fn accuracies(&self) -> &HeadGrid<f64> {
        &self.accuracies
    }

    /// Every head, best first.
    pub fn order(&self) -> &[HeadId] {
        &self.order
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The selected heads, best first.
    pub fn top_k(&self) -> &[HeadId] {
        &self.order[..self.k]
    }

    /// Same order with a different selection size, capped at `L × H`.
    pub fn with_k(&self, k: usize) -> Self {
        Self {
            k: k.min(self.order.len()),
            ..self.clone()
        }
    }
}

/// Ranks heads by accuracy, descending, ties by `(layer, head)`.
///
/// # Errors
///
/// [`Error::Config`] for a negative `k` or a non-finite accuracy.
pub fn rank_heads(accuracies: &HeadGrid<f64>, k: i64) -> Result<HeadRanking> {
    let k = usize::try_from(k).map_err(|_| config(format!("top-k must be non-negative, got {k}")))?;
    if accuracies.values().iter().any(|a| !a.is_finite()) {
        return Err(config("head accuracies must be finite"));
    }
    let mut order: Vec<HeadId> = accuracies.iter().map(|(id, _)| id).collect();
    order.sort_by(|a, b| {
        let (x, y) = (accuracies.get(*a), accuracies.get(*b));
        y.partial_cmp(x).expect("finite").then(a.cmp(b))
    });
    Ok(HeadRanking {
        model_hash: String::new(),
        accuracies: accuracies.clone(),
        k: k.min(order.len()),
        order,
    })
}

// ---------------------------------------------------------------------------
// Shift vectors
// ---------------------------------------------------------------------------

/// Mean caption-minus-non-caption output per head.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftVectorBank {
    model_hash: String,
    shifts: HeadGrid<Vector>,
}

impl ShiftVectorBank {
    /// # Errors
    ///
    /// [`Error::Shape`] when vectors differ in length or are non-finite.
    pub fn new(model_hash: String, shifts: HeadGrid<Vector>) -> Result<Self> {
        let d = shifts.values().first().map_or(0, Vector::dim);
        if shifts.values().iter().any(|s| s.dim() != d || !s.all_finite()) {
            return Err(shape("shift vectors must share one finite dimension"));
        }
        Ok(Self { model_hash, shifts })
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn shifts(&self) -> &HeadGrid<Vector> {
        &self.shifts
    }

    pub fn get(&self, id: HeadId) -> &Vector {
        self.shifts.get(id)
    }

    pub fn head_dim(&self) -> usize {
        self.shifts.values().first().map_or(0, Vector::dim)
    }
}

/// `S_(l,h) = (1/B) Σ_b (O_b - O'_b)`.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for an empty dataset.
pub fn compute_shift_vectors(dataset: &ProbeDataset) -> Result<ShiftVectorBank> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no pairs to average".into()));
    }
    let b = dataset.len() as f64;
    let shifts = dataset.caption_outputs.map(|id, caps| {
        let nons = dataset.non_caption_outputs.get(id);
        let mut acc = vec![0.0; caps[0].dim()];
        for (c, n) in caps.iter().zip(nons) {
            for ((a, x), y) in acc.iter_mut().zip(c.as_slice()).zip(n.as_slice()) {
                *a += x - y;
            }
        }
        Vector::from(acc.into_iter().map(|a| a / b).collect::<Vec<_>>())
    });
    ShiftVectorBank::new(dataset.model_hash.clone(), shifts)
}

// ---------------------------------------------------------------------------
// End to end
// ---------------------------------------------------------------------------

/// Trains one classifier per head and returns the accuracy grid.
///
/// # Errors
///
/// As [`train_head_classifier`].
pub fn head_accuracies(dataset: &ProbeDataset, params: &ClassifierParams) -> Result<HeadGrid<f64>> {
    let mut out = HeadGrid::filled(dataset.num_layers(), dataset.num_heads(), 0.0);
    for l in 0..dataset.num_layers() {
        for h in 0..dataset.num_heads() {
            let id = HeadId::new(l, h);
            *out.get_mut(id) = train_head_classifier(&dataset.points(id), params)?;
        }
    }
    Ok(out)
}

/// Probes every head and packages the result.
///
/// # Errors
///
/// As [`head_accuracies`], [`rank_heads`] and [`compute_shift_vectors`].
pub fn probe_heads(dataset: &ProbeDataset, params: &ClassifierParams, k: i64) -> Result<ProbeArtifact> {
    let acc = head_accuracies(dataset, params)?;
    let ranking = rank_heads(&acc, k)?.with_model_hash(dataset.model_hash());
    let bank = compute_shift_vectors(dataset)?;
    ProbeArtifact::new(&ranking, &bank, ClassifierMeta::from_params(params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_accuracies_fall_back_to_head_order() {
        let acc = HeadGrid::filled(2, 3, 0.5);
        let r = rank_heads(&acc, 4).unwrap();
        assert_eq!(
            r.top_k(),
            &[
                HeadId::new(0, 0),
                HeadId::new(0, 1),
                HeadId::new(0, 2),
                HeadId::new(1, 0)
            ]
        );
    }

    #[test]
    fn k_saturates_and_rejects_negative() {
        let acc = HeadGrid::from_rows(vec![vec![0.1, 0.9], vec![0.5, 0.7]]).unwrap();
        let r = rank_heads(&acc, 10).unwrap();
        assert_eq!(r.k(), 4);
        assert_eq!(r.top_k()[0], HeadId::new(0, 1));
        assert_eq!(rank_heads(&acc, 0).unwrap().top_k(), &[]);
        assert!(matches!(rank_heads(&acc, -1), Err(Error::Config(_))));
    }

    fn grid1(vs: Vec<Vec<f64>>) -> HeadGrid<Vec<Vector>> {
        HeadGrid::from_fn(1, 1, |_| vs.iter().cloned().map(Vector::from).collect())
    }

    #[test]
    fn single_pair_shift_is_exact_difference() {
        let o = grid1(vec![vec![0.3, -1.25]]);
        let o2 = grid1(vec![vec![0.1, 0.5]]);
        let ds = ProbeDataset::from_parts(String::new(), o.clone(), o2.clone(), o, o2).unwrap();
        let bank = compute_shift_vectors(&ds).unwrap();
        assert_eq!(bank.get(HeadId::new(0, 0)).as_slice(), &[0.3 - 0.1, -1.25 - 0.5]);
        assert_eq!(ds.points(HeadId::new(0, 0)).len(), 2);
    }

    #[test]
    fn empty_dataset_has_no_shift() {
        let e = grid1(vec![]);
        let ds = ProbeDataset::from_parts(String::new(), e.clone(), e.clone(), e.clone(), e).unwrap();
        assert!(matches!(compute_shift_vectors(&ds), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn mismatched_counts_rejected() {
        let a = grid1(vec![vec![1.0]]);
        let b = grid1(vec![vec![1.0], vec![2.0]]);
        assert!(ProbeDataset::from_parts(String::new(), a.clone(), b, a.clone(), a).is_err());
    }
}

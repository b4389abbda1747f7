// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gated shift intervention at inference.
//!
//! The gate is the probe's top-K head set. During a forward pass every
//! gated head's output becomes `O + alpha * S_(l,h)` before the layer's
//! output projection.

use std::time::{Duration, Instant};

use crate::error::{config, shape, Error, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::model::{
    forward, CaptureFlags, DecoderWeights, ForwardTrace, InterventionHook, SequenceInput, ShiftPositions,
};
use crate::probe::{HeadRanking, ShiftVectorBank};

/// Intensity, gate and shift vectors for one intervention setting.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionConfig {
    alpha: f64,
    gate: HeadGrid<bool>,
    bank: ShiftVectorBank,
    positions: ShiftPositions,
}

impl InterventionConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of gated heads.
    pub fn k(&self) -> usize {
        self.gate.values().iter().filter(|&&g| g).count()
    }

    pub fn gate(&self) -> &HeadGrid<bool> {
        &self.gate
    }

    pub fn bank(&self) -> &ShiftVectorBank {
        &self.bank
    }

    pub fn positions(&self) -> ShiftPositions {
        self.positions
    }

    pub fn model_hash(&self) -> &str {
        self.bank.model_hash()
    }

    /// Same gate applied at a different set of positions.
    pub fn with_positions(mut self, positions: ShiftPositions) -> Self {
        self.positions = positions;
        self
    }

    /// Gated heads in `(layer, head)` order.
    pub fn gated_heads(&self) -> Vec<HeadId> {
        self.gate.iter().filter(|(_, &g)| g).map(|(id, _)| id).collect()
    }

    /// Decoder hook borrowing this config's shift vectors.
    pub fn hook(&self) -> InterventionHook<'_> {
        InterventionHook {
            alpha: self.alpha,
            positions: self.positions,
            shifts: self
                .gated_heads()
                .into_iter()
                .map(|id| (id, self.bank.get(id).as_slice()))
                .collect(),
        }
    }
}

/// Gates exactly the ranking's top-K heads.
///
/// # Errors
///
/// [`Error::Provenance`] when ranking and bank come from different models,
/// [`Error::Shape`] when their grids differ, [`Error::Config`] for a
/// non-finite `alpha`.
pub fn build_gate(ranking: &HeadRanking, bank: &ShiftVectorBank, alpha: f64) -> Result<InterventionConfig> {
    if ranking.model_hash() != bank.model_hash() {
        return Err(Error::Provenance(format!(
            "ranking from model {} but shift vectors from {}",
            ranking.model_hash(),
            bank.model_hash()
        )));
    }
    if !ranking.accuracies().same_shape(bank.shifts()) {
        return Err(shape("ranking and shift bank differ in shape"));
    }
    if !alpha.is_finite() {
        return Err(config("alpha must be finite"));
    }
    let acc = ranking.accuracies();
    let mut gate = HeadGrid::filled(acc.num_layers(), acc.num_heads(), false);
    for &id in ranking.top_k() {
        *gate.get_mut(id) = true;
    }
    Ok(InterventionConfig {
        alpha,
        gate,
        bank: bank.clone(),
        positions: ShiftPositions::LastToken,
    })
}

fn check_dims(weights: &DecoderWeights, cfg: &InterventionConfig) -> Result<()> {
    let mc = weights.config();
    if cfg.gate.num_layers() != mc.num_layers || cfg.gate.num_heads() != mc.num_heads {
        return Err(shape(format!(
            "gate is {}x{}, model is {}x{}",
            cfg.gate.num_layers(),
            cfg.gate.num_heads(),
            mc.num_layers,
            mc.num_heads
        )));
    }
    if cfg.bank.head_dim() != mc.head_dim {
        return Err(shape(format!(
            "shift vectors have {} entries, head_dim is {}",
            cfg.bank.head_dim(),
            mc.head_dim
        )));
    }
    Ok(())
}

/// Forward pass with the gated shifts applied.
///
/// # Errors
///
/// [`Error::Shape`] when the config does not fit the model, plus
/// forward-pass errors.
pub fn intervened_forward(
    weights: &DecoderWeights,
    input: &SequenceInput,
    cfg: &InterventionConfig,
    capture: CaptureFlags,
) -> Result<ForwardTrace> {
    check_dims(weights, cfg)?;
    forward(weights, input, capture, Some(&cfg.hook()))
}

/// What an intervention did to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionReport {
    /// `|alpha| * |S|` for every gated head.
    pub applied_shift_norms: Vec<(HeadId, f64)>,
    /// Frobenius norm of each layer's output change against the baseline.
    pub layer_delta_norms: Vec<f64>,
    /// Fastest of the timed baseline passes.
    pub baseline_time: Duration,
    /// Fastest of the timed intervened passes.
    pub intervened_time: Duration,
}

impl InterventionReport {
    /// Intervened over baseline wall-clock time.
    pub fn overhead_ratio(&self) -> f64 {
        self.intervened_time.as_secs_f64() / self.baseline_time.as_secs_f64().max(f64::MIN_POSITIVE)
    }
}

/// Runs baseline and intervened passes side by side.
///
/// Timing interleaves `reps` baseline and intervened passes and keeps the
/// fastest of each, which is robust to scheduler noise.
///
/// # Errors
///
/// As [`intervened_forward`]; [`Error::Config`] when `reps == 0`.
pub fn intervention_report(
    weights: &DecoderWeights,
    input: &SequenceInput,
    cfg: &InterventionConfig,
    reps: usize,
) -> Result<InterventionReport> {
    if reps == 0 {
        return Err(config("timing needs at least one repetition"));
    }
    let capture = CaptureFlags {
        hidden_states: true,
        ..CaptureFlags::NONE
    };
    let base = forward(weights, input, capture, None)?;
    let tuned = intervened_forward(weights, input, cfg, capture)?;
    let (hb, ht) = (
        base.hidden_states().expect("captured"),
        tuned.hidden_states().expect("captured"),
    );
    let layer_delta_norms = hb[1..]
        .iter()
        .zip(&ht[1..])
        .map(|(b, t)| t.sub(b).map(|d| d.frobenius()))
        .collect::<Result<Vec<_>>>()?;
    let applied_shift_norms = cfg
        .gated_heads()
        .into_iter()
        .map(|id| (id, cfg.alpha.abs() * cfg.bank.get(id).norm()))
        .collect();

    let (mut best_base, mut best_tuned) = (Duration::MAX, Duration::MAX);
    for _ in 0..reps {
        let t0 = Instant::now();
        std::hint::black_box(forward(weights, input, CaptureFlags::NONE, None)?);
        best_base = best_base.min(t0.elapsed());
        let t0 = Instant::now();
        std::hint::black_box(intervened_forward(weights, input, cfg, CaptureFlags::NONE)?);
        best_tuned = best_tuned.min(t0.elapsed());
    }
    Ok(InterventionReport {
        applied_shift_norms,
        layer_delta_norms,
        baseline_time: best_base,
        intervened_time: best_tuned,
    })
}

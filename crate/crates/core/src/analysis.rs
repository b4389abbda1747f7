// SPDX-License-Identifier: MIT OR Apache-2.0

//! Last-token visual attention sums and change rates.
//!
//! For every head, `Sum_(l,h)` is the mass the last token puts on the `m`
//! visual positions. Summed over a dataset it gives a profile. Comparing a
//! caption profile against a non-caption profile gives head-wise rates
//! `(S_cap - S_non) / S_non` and layer-wise rates `Σ_h Δ / Σ_h S_non`.

use crate::error::{shape, Error, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::model::ForwardTrace;
use crate::report::{csv_string, opt_sig9, sig9};

/// Per-head last-token visual attention mass of one trace.
///
/// # Errors
///
/// [`Error::Shape`] if `m` exceeds the sequence length,
/// [`Error::Config`] if attention was not captured.
pub fn visual_attention_sum(trace: &ForwardTrace, m: usize) -> Result<HeadGrid<f64>> {
    if m > trace.seq_len() {
        return Err(shape(format!(
            "visual length {m} exceeds sequence length {}",
            trace.seq_len()
        )));
    }
    let att = trace
        .attention()
        .ok_or_else(|| Error::Config("trace was captured without attention weights".into()))?;
    let last = trace.seq_len() - 1;
    Ok(att.map(|_, a| a.row(last)[..m].iter().sum()))
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

/// Visual attention sums accumulated over `sample_count` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualAttentionProfile {
    sums: HeadGrid<f64>,
    sample_count: usize,
}

impl VisualAttentionProfile {
    /// Empty profile for an `L × H` model.
    pub fn empty(num_layers: usize, num_heads: usize) -> Self {
        Self {
            sums: HeadGrid::filled(num_layers, num_heads, 0.0),
            sample_count: 0,
        }
    }

    /// Profile from precomputed sums.
    pub fn from_sums(sums: HeadGrid<f64>, sample_count: usize) -> Self {
        Self { sums, sample_count }
    }

    #[inline]
    pub fn sums(&self) -> &HeadGrid<f64> {
        &self.sums
    }

    #[inline]
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Adds one per-sample grid.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] on a grid of a different shape.
    pub fn add_grid(&mut self, grid: &HeadGrid<f64>) -> Result<()> {
        if !self.sums.same_shape(grid) {
            return Err(shape("profile and sample grid differ in shape"));
        }
        for (id, v) in grid.iter() {
            *self.sums.get_mut(id) += v;
        }
        self.sample_count += 1;
        Ok(())
    }

    /// Adds the visual attention sums of one trace.
    ///
    /// # Errors
    ///
    /// As [`visual_attention_sum`] and [`VisualAttentionProfile::add_grid`].
    pub fn add_trace(&mut self, trace: &ForwardTrace, m: usize) -> Result<()> {
        self.add_grid(&visual_attention_sum(trace, m)?)
    }

    /// Merges a partial profile computed elsewhere.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] on a shape mismatch.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.sums.same_shape(&other.sums) {
            return Err(shape("profiles differ in shape"));
        }
        for (id, v) in other.sums.iter() {
            *self.sums.get_mut(id) += v;
        }
        self.sample_count += other.sample_count;
        Ok(())
    }
}

/// Sums visual attention over `(trace, m)` pairs.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for no traces, otherwise as
/// [`VisualAttentionProfile::add_trace`].
pub fn accumulate_profile<'a, I>(traces: I) -> Result<VisualAttentionProfile>
where
    I: IntoIterator<Item = (&'a ForwardTrace, usize)>,
{
    let mut profile: Option<VisualAttentionProfile> = None;
    for (trace, m) in traces {
        let p = profile.get_or_insert_with(|| {
            let g = trace.last_outputs();
            VisualAttentionProfile::empty(g.num_layers(), g.num_heads())
        });
        p.add_trace(trace, m)?;
    }
    profile.ok_or_else(|| Error::EmptyDataset("no traces to accumulate".into()))
}

// ---------------------------------------------------------------------------
// Change rates
// ---------------------------------------------------------------------------

/// Head-wise and layer-wise change rates of a caption profile over a
/// non-caption baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRateReport {
    deltas: HeadGrid<f64>,
    head_rates: HeadGrid<Option<f64>>,
    layer_rates: Vec<Option<f64>>,
    fraction_enhanced: f64,
}

impl ChangeRateReport {
    /// `S_cap - S_non` per head.
    pub fn deltas(&self) -> &HeadGrid<f64> {
        &self.deltas
    }

    /// `None` where the baseline sum is zero.
    pub fn head_rates(&self) -> &HeadGrid<Option<f64>> {
        &self.head_rates
    }

    pub fn layer_rates(&self) -> &[Option<f64>] {
        &self.layer_rates
    }

    /// Share of defined head rates that are strictly positive.
    pub fn fraction_enhanced(&self) -> f64 {
        self.fraction_enhanced
    }

    /// Layers whose rate is strictly positive.
    pub fn enhanced_layers(&self) -> usize {
        self.layer_rates
            .iter()
            .filter(|r| r.is_some_and(|v| v > 0.0))
            .count()
    }

    /// The `n` heads with the highest defined rate, ties broken by
    /// `(layer, head)`.
    pub fn top_heads(&self, n: usize) -> Vec<HeadId> {
        let mut defined: Vec<(HeadId, f64)> = self
            .head_rates
            .iter()
            .filter_map(|(id, r)| r.map(|v| (id, v)))
            .collect();
        defined.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        defined.into_iter().take(n).map(|(id, _)| id).collect()
    }

    /// Heads in the top tenth by rate, `ceil(0.1 · L·H)` of them.
    pub fn top_decile(&self) -> Vec<HeadId> {
        self.top_heads(self.head_rates.len().div_ceil(10))
    }

    /// `layer,head,value` CSV of head rates; undefined rates are empty.
    ///
    /// # Errors
    ///
    /// Only on writer failure.
    pub fn head_csv(&self) -> Result<String> {
        head_grid_csv(&self.head_rates)
    }

    /// `layer,rate` CSV; undefined rates are empty.
    ///
    /// # Errors
    ///
    /// Only on writer failure.
    pub fn layer_csv(&self) -> Result<String> {
        csv_string(
            &["layer", "rate"],
            self.layer_rates
                .iter()
                .enumerate()
                .map(|(l, r)| vec![l.to_string(), opt_sig9(*r)]),
        )
    }
}

/// Computes change rates of `caption` relative to `non_caption`.
///
/// # Errors
///
/// [`Error::Shape`] when the grids or sample counts differ.
pub fn change_rates(
    caption: &VisualAttentionProfile,
    non_caption: &VisualAttentionProfile,
) -> Result<ChangeRateReport> {
    if !caption.sums.same_shape(&non_caption.sums) {
        return Err(shape("caption and non-caption profiles differ in shape"));
    }
    if caption.sample_count != non_caption.sample_count {
        return Err(shape(format!(
            "sample counts differ: {} vs {}",
            caption.sample_count, non_caption.sample_count
        )));
    }
    let deltas = caption.sums.map(|id, c| c - non_caption.sums.get(id));
    let head_rates = deltas.map(|id, d| {
        let base = *non_caption.sums.get(id);
        (base > 0.0).then(|| d / base)
    });
    let layer_rates = (0..deltas.num_layers())
        .map(|l| {
            let base: f64 = non_caption.sums.layer(l).iter().sum();
            let delta: f64 = deltas.layer(l).iter().sum();
            (base > 0.0).then(|| delta / base)
        })
        .collect();
    let defined: Vec<f64> = head_rates.values().iter().flatten().copied().collect();
    let fraction_enhanced = if defined.is_empty() {
        0.0
    } else {
        defined.iter().filter(|&&r| r > 0.0).count() as f64 / defined.len() as f64
    };
    Ok(ChangeRateReport {
        deltas,
        head_rates,
        layer_rates,
        fraction_enhanced,
    })
}

/// `layer,head,value` CSV of an optional grid, 9 significant digits.
///
/// # Errors
///
/// Only on writer failure.
pub fn head_grid_csv(grid: &HeadGrid<Option<f64>>) -> Result<String> {
    csv_string(
        &["layer", "head", "value"],
        grid.iter()
            .map(|(id, v)| vec![id.layer.to_string(), id.head.to_string(), opt_sig9(*v)]),
    )
}

/// `layer,head,value` CSV of a complete grid.
///
/// # Errors
///
/// Only on writer failure.
pub fn dense_grid_csv(grid: &HeadGrid<f64>) -> Result<String> {
    csv_string(
        &["layer", "head", "value"],
        grid.iter()
            .map(|(id, v)| vec![id.layer.to_string(), id.head.to_string(), sig9(*v)]),
    )
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-only causal decoder with a visual-embedding prefix.
//!
//! The first layer input is the visual rows followed by the embedded text
//! tokens. Each layer adds `concat_h(O_h) · W_o` to the residual stream;
//! there is no MLP, no layer norm and no positional encoding. The answer
//! logit is `readout · h_last` on the final hidden state.

mod io;

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::tensor::{axpy, dot, matmul, softmax_in_place, vecmat, Matrix, Vector};

// ---------------------------------------------------------------------------
// Configuration and weights
// ---------------------------------------------------------------------------

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Config with `model_dim = num_heads * head_dim`.
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            num_layers,
            num_heads,
            head_dim,
            model_dim: num_heads * head_dim,
            vocab_size,
            max_seq_len,
        }
    }

    /// # Errors
    ///
    /// [`Error::Config`] when a count is zero, `max_seq_len < 2` or
    /// `model_dim != num_heads * head_dim`.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("model_dim", self.model_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(config(format!("{name} must be at least 1")));
            }
        }
        if self.max_seq_len < 2 {
            return Err(config("max_seq_len must be at least 2"));
        }
        if self.num_heads.checked_mul(self.head_dim) != Some(self.model_dim) {
            return Err(config(format!(
                "model_dim {} != num_heads {} * head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            )));
        }
        Ok(())
    }

    /// `L × H`.
    pub fn total_heads(&self) -> usize {
        self.num_layers * self.num_heads
    }

    pub fn contains(&self, id: HeadId) -> bool {
        id.layer < self.num_layers && id.head < self.num_heads
    }
}

/// Projections of one head, each `model_dim × head_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// Heads of one layer plus the `model_dim × model_dim` output projection.
///
/// Row block `h*d .. (h+1)*d` of `wo` belongs to head `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    pub wo: Matrix,
}

/// All model parameters. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    config: ModelConfig,
    layers: Vec<LayerWeights>,
    embedding: Matrix,
    readout: Vector,
}

impl DecoderWeights {
    /// # Errors
    ///
    /// [`Error::Config`] for an invalid config or a non-finite entry,
    /// [`Error::Shape`] when any matrix disagrees with the config.
    pub fn new(
        cfg: ModelConfig,
        layers: Vec<LayerWeights>,
        embedding: Matrix,
        readout: Vector,
    ) -> Result<Self> {
        cfg.validate()?;
        let (dm, d) = (cfg.model_dim, cfg.head_dim);
        if layers.len() != cfg.num_layers {
            return Err(shape(format!(
                "{} layers, config says {}",
                layers.len(),
                cfg.num_layers
            )));
        }
        let check = |m: &Matrix, r: usize, c: usize, what: &str| -> Result<()> {
            if m.rows() != r || m.cols() != c {
                return Err(shape(format!(
                    "{what} is {}x{}, expected {r}x{c}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.all_finite() {
                return Err(config(format!("{what} has a non-finite entry")));
            }
            Ok(())
        };
        for (l, layer) in layers.iter().enumerate() {
            if layer.heads.len() != cfg.num_heads {
                return Err(shape(format!(
                    "layer {l} has {} heads, config says {}",
                    layer.heads.len(),
                    cfg.num_heads
                )));
            }
            for (h, hw) in layer.heads.iter().enumerate() {
                check(&hw.wq, dm, d, &format!("layer {l} head {h} wq"))?;
                check(&hw.wk, dm, d, &format!("layer {l} head {h} wk"))?;
                check(&hw.wv, dm, d, &format!("layer {l} head {h} wv"))?;
            }
            check(&layer.wo, dm, dm, &format!("layer {l} wo"))?;
        }
        check(&embedding, cfg.vocab_size, dm, "embedding")?;
        if readout.dim() != dm {
            return Err(shape(format!(
                "readout has {} entries, expected {dm}",
                readout.dim()
            )));
        }
        if !readout.all_finite() {
            return Err(config("readout has a non-finite entry"));
        }
        Ok(Self {
            config: cfg,
            layers,
            embedding,
            readout,
        })
    }

    #[inline]
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    #[inline]
    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    #[inline]
    pub fn head(&self, id: HeadId) -> &HeadWeights {
        &self.layers[id.layer].heads[id.head]
    }

    #[inline]
    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    #[inline]
    pub fn readout(&self) -> &Vector {
        &self.readout
    }

    /// Same weights with a different readout vector.
    ///
    /// # Errors
    ///
    /// As [`DecoderWeights::new`].
    pub fn with_readout(&self, readout: Vector) -> Result<Self> {
        Self::new(self.config, self.layers.clone(), self.embedding.clone(), readout)
    }
}

// ---------------------------------------------------------------------------
// Inputs, capture flags and hooks
// ---------------------------------------------------------------------------

/// Visual prefix rows plus text token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    visual: Matrix,
    tokens: Vec<usize>,
}

impl SequenceInput {
    /// # Errors
    ///
    /// [`Error::Shape`] if either part is empty.
    pub fn new(visual: Matrix, tokens: Vec<usize>) -> Result<Self> {
        if visual.rows() == 0 {
            return Err(shape("input needs at least one visual row"));
        }
        if tokens.is_empty() {
            return Err(shape("input needs at least one text token"));
        }
        Ok(Self { visual, tokens })
    }

    #[inline]
    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    #[inline]
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Visual prefix length `m`.
    #[inline]
    pub fn visual_len(&self) -> usize {
        self.visual.rows()
    }

    /// Text length `n`.
    #[inline]
    pub fn text_len(&self) -> usize {
        self.tokens.len()
    }

    /// `m + n`.
    #[inline]
    pub fn len(&self) -> usize {
        self.visual.rows() + self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.visual.cols() != cfg.model_dim {
            return Err(shape(format!(
                "visual rows have {} columns, model_dim is {}",
                self.visual.cols(),
                cfg.model_dim
            )));
        }
        if self.len() > cfg.max_seq_len {
            return Err(shape(format!(
                "sequence length {} exceeds max_seq_len {}",
                self.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(shape(format!(
                "token {t} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        Ok(())
    }
}

/// What a forward pass records beyond the last-token outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaptureFlags {
    /// Full `(m+n) × (m+n)` attention matrices per head.
    pub attention: bool,
    /// Residual stream before every layer and after the last.
    pub hidden_states: bool,
    /// Last-token outputs with every text column masked out.
    pub masked_outputs: bool,
}

impl CaptureFlags {
    pub const NONE: Self = Self {
        attention: false,
        hidden_states: false,
        masked_outputs: false,
    };
    pub const ALL: Self = Self {
        attention: true,
        hidden_states: true,
        masked_outputs: true,
    };
    pub const ATTENTION: Self = Self {
        attention: true,
        hidden_states: false,
        masked_outputs: false,
    };
}

/// Which sequence positions receive the shift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPositions {
    /// Only the last token's head output.
    #[default]
    LastToken,
    /// Every position's head output.
    AllPositions,
}

/// Adds `alpha * S_(l,h)` to selected head outputs before `W_o`.
#[derive(Debug, Clone)]
pub struct InterventionHook<'a> {
    pub alpha: f64,
    pub positions: ShiftPositions,
    pub shifts: Vec<(HeadId, &'a [f64])>,
}

impl InterventionHook<'_> {
    /// Per-head lookup, validated against `cfg`.
    fn table(&self, cfg: &ModelConfig) -> Result<Vec<Option<&[f64]>>> {
        if !self.alpha.is_finite() {
            return Err(config("intervention alpha must be finite"));
        }
        let mut table = vec![None; cfg.total_heads()];
        for &(id, s) in &self.shifts {
            if !cfg.contains(id) {
                return Err(config(format!(
                    "hook head {id} outside {}x{} model",
                    cfg.num_layers, cfg.num_heads
                )));
            }
            if s.len() != cfg.head_dim {
                return Err(shape(format!(
                    "shift for head {id} has {} entries, head_dim is {}",
                    s.len(),
                    cfg.head_dim
                )));
            }
            let slot = &mut table[id.layer * cfg.num_heads + id.head];
            if slot.is_some() {
                return Err(config(format!("hook lists head {id} twice")));
            }
            *slot = Some(s);
        }
        Ok(table)
    }
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

/// Everything recorded during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    visual_len: usize,
    seq_len: usize,
    attention: Option<HeadGrid<Matrix>>,
    last_outputs: HeadGrid<Vector>,
    masked_last_outputs: Option<HeadGrid<Vector>>,
    hidden_states: Option<Vec<Matrix>>,
    final_hidden: Vector,
    answer_logit: f64,
}

impl ForwardTrace {
    #[inline]
    pub fn visual_len(&self) -> usize {
        self.visual_len
    }

    #[inline]
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Attention matrices, if captured.
    pub fn attention(&self) -> Option<&HeadGrid<Matrix>> {
        self.attention.as_ref()
    }

    /// Attention matrix of one head.
    ///
    /// # Errors
    ///
    /// [`Error::Config`] if attention was not captured.
    pub fn attention_of(&self, id: HeadId) -> Result<&Matrix> {
        self.attention
            .as_ref()
            .map(|g| g.get(id))
            .ok_or_else(|| config("trace was captured without attention weights"))
    }

    /// Last-token head outputs `O_(l,h)[m+n]` before any intervention.
    #[inline]
    pub fn last_outputs(&self) -> &HeadGrid<Vector> {
        &self.last_outputs
    }

    /// Last-token outputs with text positions masked, if captured.
    pub fn masked_last_outputs(&self) -> Option<&HeadGrid<Vector>> {
        self.masked_last_outputs.as_ref()
    }

    /// `H^0 .. H^L`: the layer input then each layer's output, if captured.
    pub fn hidden_states(&self) -> Option<&[Matrix]> {
        self.hidden_states.as_deref()
    }

    #[inline]
    pub fn final_hidden(&self) -> &Vector {
        &self.final_hidden
    }

    #[inline]
    pub fn answer_logit(&self) -> f64 {
        self.answer_logit
    }
}

// ---------------------------------------------------------------------------
// Attention kernels
// ---------------------------------------------------------------------------

/// `Q Kᵀ / √d`, with `-∞` above the diagonal when `causal`.
///
/// # Errors
///
/// [`Error::Shape`] if `Q` and `K` differ in shape.
pub fn scaled_scores(q: &Matrix, k: &Matrix, causal: bool) -> Result<Matrix> {
    if q.rows() != k.rows() || q.cols() != k.cols() {
        return Err(shape(format!(
            "Q is {}x{}, K is {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols()
        )));
    }
    let t = q.rows();
    let scale = (q.cols() as f64).sqrt();
    let mut s = Matrix::zeros(t, t);
    for i in 0..t {
        let qi = q.row(i);
        let row = s.row_mut(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = if causal && j > i {
                f64::NEG_INFINITY
            } else {
                dot(qi, k.row(j)) / scale
            };
        }
    }
    Ok(s)
}

/// Scaled dot-product attention for one head, returning `(A, O)`.
///
/// # Errors
///
/// [`Error::Shape`] when row counts or `Q`/`K` widths disagree.
pub fn single_head_attention(q: &Matrix, k: &Matrix, v: &Matrix, causal: bool) -> Result<(Matrix, Matrix)> {
    if v.rows() != q.rows() {
        return Err(shape(format!("V has {} rows, Q has {}", v.rows(), q.rows())));
    }
    let mut a = scaled_scores(q, k, causal)?;
    for r in 0..a.rows() {
        softmax_in_place(a.row_mut(r))?;
    }
    let o = matmul(&a, v)?;
    Ok((a, o))
}

/// Output of the last row when only the first `m` columns may be attended.
///
/// `scores` is the unmasked, scaled score row of the last token.
///
/// # Errors
///
/// [`Error::DegenerateRow`] when `m == 0`, since every column is masked.
pub fn masked_row_output(scores: &[f64], values: &Matrix, m: usize) -> Result<Vector> {
    if scores.len() != values.rows() {
        return Err(shape(format!(
            "{} scores for {} value rows",
            scores.len(),
            values.rows()
        )));
    }
    vecmat(&masked_row_weights(scores, m)?, values)
}

/// Softmax of `scores` with every column from `m` on set to `-∞`.
///
/// # Errors
///
/// [`Error::DegenerateRow`] when `m == 0`.
pub fn masked_row_weights(scores: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut row = scores.to_vec();
    for s in row.iter_mut().skip(m) {
        *s = f64::NEG_INFINITY;
    }
    softmax_in_place(&mut row)?;
    Ok(row)
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Runs the decoder.
///
/// With a hook, every hooked head's output `O` becomes `O + alpha * S` at the
/// hooked positions before the output projection. `alpha == 0` skips the
/// addition entirely, so the result is bitwise equal to an unhooked run.
///
/// # Errors
///
/// [`Error::Shape`] for inputs that do not match the model,
/// [`Error::Config`] for a hook naming a head outside the model.
pub fn forward(
    weights: &DecoderWeights,
    input: &SequenceInput,
    capture: CaptureFlags,
    hook: Option<&InterventionHook<'_>>,
) -> Result<ForwardTrace> {
    let cfg = weights.config();
    input.validate(cfg)?;
    let table = hook.map(|h| h.table(cfg)).transpose()?;
    let alpha = hook.map_or(0.0, |h| h.alpha);
    let positions = hook.map_or(ShiftPositions::LastToken, |h| h.positions);

    let (m, t) = (input.visual_len(), input.len());
    let (nl, nh, d, dm) = (cfg.num_layers, cfg.num_heads, cfg.head_dim, cfg.model_dim);

    let mut x = Matrix::zeros(t, dm);
    for i in 0..m {
        x.row_mut(i).copy_from_slice(input.visual().row(i));
    }
    for (i, &tok) in input.tokens().iter().enumerate() {
        x.row_mut(m + i).copy_from_slice(weights.embedding().row(tok));
    }

    let mut hidden = capture.hidden_states.then(|| vec![x.clone()]);
    let mut attention = capture.attention.then(|| Vec::with_capacity(nl * nh));
    let mut masked = capture.masked_outputs.then(|| Vec::with_capacity(nl * nh));
    let mut last_outputs = Vec::with_capacity(nl * nh);

    let mut concat = Matrix::zeros(t, dm);
    for (l, layer) in weights.layers().iter().enumerate() {
        for (h, hw) in layer.heads.iter().enumerate() {
            let q = matmul(&x, &hw.wq)?;
            let k = matmul(&x, &hw.wk)?;
            let v = matmul(&x, &hw.wv)?;
            let mut a = scaled_scores(&q, &k, true)?;
            if let Some(masked) = masked.as_mut() {
                masked.push(masked_row_output(a.row(t - 1), &v, m)?);
            }
            for r in 0..t {
                softmax_in_place(a.row_mut(r))?;
            }
            let mut o = matmul(&a, &v)?;
            last_outputs.push(Vector::from(o.row(t - 1).to_vec()));

            if let Some(s) = table.as_ref().and_then(|tb| tb[l * nh + h]) {
                if alpha != 0.0 {
                    let rows = match positions {
                        ShiftPositions::LastToken => t - 1..t,
                        ShiftPositions::AllPositions => 0..t,
                    };
                    for r in rows {
                        axpy(alpha, s, o.row_mut(r));
                    }
                }
            }
            for r in 0..t {
                concat.row_mut(r)[h * d..(h + 1) * d].copy_from_slice(o.row(r));
            }
            if let Some(att) = attention.as_mut() {
                att.push(a);
            }
        }
        let delta = matmul(&concat, &layer.wo)?;
        for (xi, di) in x.as_mut_slice().iter_mut().zip(delta.as_slice()) {
            *xi += di;
        }
        if let Some(hs) = hidden.as_mut() {
            hs.push(x.clone());
        }
    }

    let final_hidden = Vector::from(x.row(t - 1).to_vec());
    let answer_logit = dot(weights.readout().as_slice(), final_hidden.as_slice());
    fn grid<T>(nl: usize, nh: usize, cells: Vec<T>) -> HeadGrid<T> {
        let mut it = cells.into_iter();
        HeadGrid::from_fn(nl, nh, |_| it.next().expect("one entry per head"))
    }
    Ok(ForwardTrace {
        visual_len: m,
        seq_len: t,
        attention: attention.map(|c| grid(nl, nh, c)),
        last_outputs: grid(nl, nh, last_outputs),
        masked_last_outputs: masked.map(|c| grid(nl, nh, c)),
        hidden_states: hidden,
        final_hidden,
        answer_logit,
    })
}

/// Masked last-token output `Õ` of one head.
///
/// # Errors
///
/// As [`forward`]; [`Error::Config`] for a head outside the model.
pub fn masked_last_token_output(
    weights: &DecoderWeights,
    input: &SequenceInput,
    id: HeadId,
) -> Result<Vector> {
    if !weights.config().contains(id) {
        return Err(config(format!("head {id} outside the model")));
    }
    let trace = forward(
        weights,
        input,
        CaptureFlags {
            masked_outputs: true,
            ..CaptureFlags::NONE
        },
        None,
    )?;
    let grid = trace
        .masked_last_outputs
        .ok_or_else(|| Error::Config("masked outputs missing".into()))?;
    Ok(grid.get(id).clone())
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! A decoder with a known caption-sensitive circuit.
//!
//! Most heads are random. On top of them sit four hand-built parts:
//!
//! * planted heads, whose query reads the caption marker and whose key
//!   reads the visual coordinate, so a marker on the last token pulls
//!   attention onto the image; they write the attended visual mass into a
//!   `LOOK` coordinate;
//! * two routing heads in layers 0 and 1 that copy the questioned object's
//!   identity onto the last token;
//! * an answer head in the last layer that matches that identity against
//!   the visual rows, with a visual-attention bias driven by `LOOK`;
//! * a readout on the `ANS` coordinate the answer head writes.
//!
//! Presence questions carry no marker, so their `LOOK` signal is weak and
//! the answer head undershoots. Adding the planted heads' caption shift at
//! inference restores it.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::corpus::SceneParams;
use super::vocab::{Layout, VocabSpec, CONTENT_WORDS, MARKER, NUM_WORDS};
use crate::error::{config, Result};
use crate::grid::HeadId;
use crate::model::{DecoderWeights, HeadWeights, LayerWeights, ModelConfig};
use crate::tensor::{Matrix, Vector};

/// Gains of the hand-built circuit and scales of the random heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitParams {
    pub qk_sigma: f64,
    pub v_sigma: f64,
    pub o_sigma: f64,
    /// Random heads' leak into the answer coordinate.
    pub answer_leak: f64,
    /// Extra key weight on salience at planted heads.
    pub salience_tilt: f64,
    pub router_gain: f64,
    /// Object-identity matching gain of the answer head.
    pub match_gain: f64,
    /// Visual-attention bias per unit of `LOOK`.
    pub look_gain: f64,
    /// Visual-attention bias on any text token.
    pub answer_offset: f64,
    /// Negative answer contribution of attending to text.
    pub text_value: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            qk_sigma: 0.5,
            v_sigma: 0.5,
            o_sigma: 0.3,
            answer_leak: 0.05,
            salience_tilt: 1.0,
            router_gain: 5.0,
            match_gain: 2.5,
            look_gain: 0.75,
            answer_offset: -1.6,
            text_value: 1.0,
        }
    }
}

impl CircuitParams {
    fn validate(&self) -> Result<()> {
        let all = [
            self.qk_sigma,
            self.v_sigma,
            self.o_sigma,
            self.answer_leak,
            self.salience_tilt,
            self.router_gain,
            self.match_gain,
            self.look_gain,
            self.answer_offset,
            self.text_value,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(config("circuit parameters must be finite"));
        }
        if [self.qk_sigma, self.v_sigma, self.o_sigma, self.answer_leak]
            .iter()
            .any(|&s| s < 0.0)
        {
            return Err(config("random weight scales must be non-negative"));
        }
        Ok(())
    }
}

/// Everything needed to build a planted model and its corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedModelSpec {
    pub config: ModelConfig,
    pub planted: Vec<HeadId>,
    /// Query gain of the marker toward visual keys at planted heads.
    pub strength: f64,
    #[serde(default)]
    pub circuit: CircuitParams,
    #[serde(default)]
    pub vocab: VocabSpec,
    #[serde(default)]
    pub scene: SceneParams,
}

/// Default sequence budget; room for a scene, a caption, mentions and a
/// question.
pub const DEFAULT_MAX_SEQ_LEN: usize = 24;
pub const DEFAULT_STRENGTH: f64 = 3.0;
pub const DEFAULT_NUM_PLANTED: usize = 4;

impl Default for PlantedModelSpec {
    fn default() -> Self {
        let mut spec = Self::new(6, 8, 8, VocabSpec::default(), Vec::new(), DEFAULT_STRENGTH);
        spec.planted = spec
            .choose_planted(DEFAULT_NUM_PLANTED, 0)
            .expect("default model has room for the default planted set");
        spec
    }
}

impl PlantedModelSpec {
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        vocab: VocabSpec,
        planted: Vec<HeadId>,
        strength: f64,
    ) -> Self {
        Self {
            config: ModelConfig::new(
                num_layers,
                num_heads,
                head_dim,
                vocab.vocab_size(),
                DEFAULT_MAX_SEQ_LEN,
            ),
            planted,
            strength,
            circuit: CircuitParams::default(),
            vocab,
            scene: SceneParams::default(),
        }
    }

    /// Heads that route the questioned object to the last token.
    pub fn routers(&self) -> [HeadId; 2] {
        let h = self.config.num_heads - 1;
        [HeadId::new(0, h), HeadId::new(1, h)]
    }

    pub fn answer_head(&self) -> HeadId {
        HeadId::new(self.config.num_layers - 1, 0)
    }

    /// Heads that may be planted: any head before the last layer that is
    /// not a router.
    pub fn eligible_heads(&self) -> Vec<HeadId> {
        let routers = self.routers();
        (0..self.config.num_layers.saturating_sub(1))
            .flat_map(|l| (0..self.config.num_heads).map(move |h| HeadId::new(l, h)))
            .filter(|id| !routers.contains(id))
            .collect()
    }

    /// Draws `count` distinct eligible heads, sorted.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Config`] when fewer than `count` heads are eligible.
    pub fn choose_planted(&self, count: usize, seed: u64) -> Result<Vec<HeadId>> {
        let eligible = self.eligible_heads();
        if count > eligible.len() {
            return Err(config(format!(
                "cannot plant {count} heads; only {} are eligible",
                eligible.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<HeadId> = index::sample(&mut rng, eligible.len(), count)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// # Errors
    ///
    /// [`crate::Error::Config`] describing the first violated requirement.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        self.vocab.validate()?;
        self.scene.validate()?;
        self.circuit.validate()?;
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(config(format!(
                "planting strength must be positive, got {}",
                self.strength
            )));
        }
        if c.num_layers < 3 {
            return Err(config("the planted circuit needs at least 3 layers"));
        }
        if c.vocab_size != self.vocab.vocab_size() {
            return Err(config(format!(
                "vocab_size {} does not match {} objects",
                c.vocab_size, self.vocab.num_objects
            )));
        }
        let need_d = (self.vocab.num_objects + 1).max(3);
        if c.head_dim < need_d {
            return Err(config(format!("head_dim must be at least {need_d}")));
        }
        Layout::new(self.vocab.num_objects, c.model_dim)?;
        if c.max_seq_len < self.vocab.max_objects + 5 {
            return Err(config("max_seq_len too short for a scene and a question"));
        }
        let eligible = self.eligible_heads();
        let mut seen = self.planted.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.planted.len() {
            return Err(config("planted heads must be distinct"));
        }
        if let Some(id) = self.planted.iter().find(|id| !eligible.contains(id)) {
            return Err(config(format!(
                "head {id} cannot be planted; use a non-router head before the last layer"
            )));
        }
        Ok(())
    }
}

/// Builds the planted model.
///
/// # Errors
///
/// [`crate::Error::Config`] when `spec` is invalid, e.g. strength `<= 0`.
pub fn build_planted_model(spec: &PlantedModelSpec, seed: u64) -> Result<DecoderWeights> {
    spec.validate()?;
    let c = spec.config;
    let p = &spec.circuit;
    let (dm, d, nh) = (c.model_dim, c.head_dim, c.num_heads);
    let lay = Layout::new(spec.vocab.num_objects, dm)?;
    let n_obj = spec.vocab.num_objects;
    let sq = (d as f64).sqrt();
    let vs = spec.scene.visual_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let normal = |sd: f64| Normal::new(0.0, sd).expect("finite non-negative sd");
    let qk = normal(p.qk_sigma / (dm as f64).sqrt());
    let vv = normal(p.v_sigma / (dm as f64).sqrt());
    let oo = normal(p.o_sigma / (nh as f64).sqrt());
    let leak = normal(p.answer_leak);
    let free: Vec<usize> = lay.words().chain(lay.noise()).collect();

    let mut layers: Vec<LayerWeights> = (0..c.num_layers)
        .map(|_| {
            let mut wo = Matrix::zeros(dm, dm);
            let heads = (0..nh)
                .map(|h| {
                    let mut draw = |dist: &Normal<f64>| {
                        let data = (0..dm * d).map(|_| dist.sample(&mut rng)).collect();
                        Matrix::new(dm, d, data).expect("dm x d")
                    };
                    let mut wq = draw(&qk);
                    let wk = draw(&qk);
                    let wv = draw(&vv);
                    for r in [lay.mark, lay.look, lay.ans] {
                        wq.row_mut(r).fill(0.0);
                    }
                    for j in 0..d {
                        let row = wo.row_mut(h * d + j);
                        for &f in &free {
                            row[f] = oo.sample(&mut rng);
                        }
                        row[lay.ans] = leak.sample(&mut rng);
                    }
                    HeadWeights { wq, wk, wv }
                })
                .collect();
            LayerWeights { heads, wo }
        })
        .collect();

    // Clears query/key channels `qk` and value channels `v` of one head,
    // including the value channels' rows of W_o.
    let clear = |layers: &mut [LayerWeights], id: HeadId, qk: &[usize], v: &[usize]| {
        let layer = &mut layers[id.layer];
        let hw = &mut layer.heads[id.head];
        for r in 0..dm {
            for &j in qk {
                hw.wq.set(r, j, 0.0);
                hw.wk.set(r, j, 0.0);
            }
            for &j in v {
                hw.wv.set(r, j, 0.0);
            }
        }
        for &j in v {
            layer.wo.row_mut(id.head * d + j).fill(0.0);
        }
    };

    let look_weight = if spec.planted.is_empty() {
        0.0
    } else {
        1.0 / spec.planted.len() as f64
    };
    for &id in &spec.planted {
        clear(&mut layers, id, &[0], &[1, 2]);
        let layer = &mut layers[id.layer];
        let hw = &mut layer.heads[id.head];
        hw.wq.set(lay.mark, 0, spec.strength * sq);
        hw.wk.set(lay.vis, 0, 1.0 / vs);
        hw.wk.set(lay.sal, 0, p.salience_tilt / vs);
        hw.wv.set(lay.vis, 1, 1.0 / vs);
        hw.wv.set(lay.sal, 2, 1.0 / vs);
        layer.wo.set(id.head * d + 1, lay.look, look_weight);
    }

    let routers = spec.routers();
    let obj_channels: Vec<usize> = (0..n_obj).collect();
    for id in routers {
        clear(&mut layers, id, &[0], &obj_channels);
        let layer = &mut layers[id.layer];
        let hw = &mut layer.heads[id.head];
        hw.wq.set(lay.txt, 0, p.router_gain * sq);
        hw.wk.set(lay.cont, 0, 1.0);
        for o in 0..n_obj {
            hw.wv.set(lay.qobj(o), o, 1.0);
            layer
                .wo
                .set(id.head * d + o, lay.rqobj(o), 1.0 / routers.len() as f64);
        }
    }

    let ans = spec.answer_head();
    let g = n_obj;
    let qk_channels: Vec<usize> = (0..=g).collect();
    clear(&mut layers, ans, &qk_channels, &[0]);
    {
        let layer = &mut layers[ans.layer];
        let hw = &mut layer.heads[ans.head];
        for o in 0..n_obj {
            hw.wq.set(lay.rqobj(o), o, p.match_gain * sq);
            hw.wk.set(lay.obj(o), o, 1.0 / vs);
        }
        hw.wq.set(lay.look, g, p.look_gain * sq);
        hw.wq.set(lay.txt, g, p.answer_offset * sq);
        hw.wk.set(lay.vis, g, 1.0 / vs);
        hw.wv.set(lay.vis, 0, 1.0 / vs);
        hw.wv.set(lay.txt, 0, -p.text_value);
        layer.wo.set(ans.head * d, lay.ans, 1.0);
    }

    let mut emb = Matrix::zeros(c.vocab_size, dm);
    emb.set(MARKER, lay.mark, 1.0);
    emb.set(MARKER, lay.txt, 1.0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for w in 1..=NUM_WORDS {
        let v: Vec<f64> = (0..NUM_WORDS).map(|_| unit.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (k, x) in lay.words().zip(&v) {
            emb.set(w, k, x / n);
        }
        emb.set(w, lay.txt, 1.0);
        if CONTENT_WORDS.contains(&w) {
            emb.set(w, lay.cont, 1.0);
        }
    }
    for o in 0..n_obj {
        let t = spec.vocab.object_token(o);
        emb.set(t, lay.qobj(o), 1.0);
        emb.set(t, lay.txt, 1.0);
        emb.set(t, lay.cont, 1.0);
    }
    let mut readout = vec![0.0; dm];
    readout[lay.ans] = 1.0;
    DecoderWeights::new(c, layers, emb, Vector::from(readout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn non_positive_strength_rejected() {
        for s in [0.0, -1.0, f64::NAN] {
            let spec = PlantedModelSpec {
                strength: s,
                ..PlantedModelSpec::default()
            };
            assert!(matches!(build_planted_model(&spec, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn ineligible_heads_rejected() {
        let base = PlantedModelSpec::default();
        for bad in [base.routers()[0], base.answer_head(), HeadId::new(9, 0)] {
            let spec = PlantedModelSpec {
                planted: vec![bad],
                ..base.clone()
            };
            assert!(matches!(build_planted_model(&spec, 0), Err(Error::Config(_))));
        }
        let dup = PlantedModelSpec {
            planted: vec![HeadId::new(0, 0), HeadId::new(0, 0)],
            ..base
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn small_heads_rejected() {
        let spec = PlantedModelSpec::new(6, 16, 4, VocabSpec::default(), vec![], 1.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn default_spec_is_valid_and_seeded() {
        let spec = PlantedModelSpec::default();
        assert_eq!(spec.planted.len(), DEFAULT_NUM_PLANTED);
        spec.validate().unwrap();
        let a = build_planted_model(&spec, 5).unwrap();
        let b = build_planted_model(&spec, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_planted_model(&spec, 6).unwrap());
    }
}

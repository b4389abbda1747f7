// SPDX-License-Identifier: MIT OR Apache-2.0

//! Versioned run configuration.
//!
//! Unknown keys are rejected at every level. Every stochastic step draws
//! its seed from [`RunConfig::seed`] through [`derive_seed`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Result};
use crate::grid::HeadId;
use crate::harness::{
    CircuitParams, PlantedModelSpec, SceneParams, VocabSpec, DEFAULT_NUM_PLANTED, DEFAULT_STRENGTH,
};
use crate::model::{ModelConfig, ShiftPositions};
use crate::probe::ClassifierParams;
use crate::search::ShiftMode;

pub const SCHEMA_VERSION: u32 = 1;

/// Size caps that keep a hostile config from exhausting memory or time.
pub const MAX_HEADS: usize = 4096;
pub const MAX_DIM: usize = 4096;
pub const MAX_SEQ_LEN: usize = 4096;
pub const MAX_OBJECTS: usize = 1024;
pub const MAX_SCENES: usize = 1_000_000;
pub const MAX_ITERATIONS: usize = 1_000_000;

/// `ceil(0.098 · total_heads)`: roughly one head in ten.
pub fn default_top_k(total_heads: usize) -> usize {
    (total_heads * 98).div_ceil(1000)
}

/// Independent 64-bit seed for a named stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"capattn/");
    h.update(stream.as_bytes());
    h.update(seed.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Model shape and planted circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub max_seq_len: usize,
    /// Drawn from the run seed when `planted` is absent.
    pub num_planted: usize,
    /// Explicit planted heads; overrides `num_planted`.
    pub planted: Option<Vec<HeadId>>,
    pub strength: f64,
    pub circuit: CircuitParams,
    pub vocab: VocabSpec,
    pub scene: SceneParams,
    /// Weights file to use instead of building the planted model. Its
    /// shape must match the fields above.
    pub weights: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let spec = PlantedModelSpec::default();
        Self {
            num_layers: spec.config.num_layers,
            num_heads: spec.config.num_heads,
            head_dim: spec.config.head_dim,
            max_seq_len: spec.config.max_seq_len,
            num_planted: DEFAULT_NUM_PLANTED,
            planted: None,
            strength: DEFAULT_STRENGTH,
            circuit: CircuitParams::default(),
            vocab: VocabSpec::default(),
            scene: SceneParams::default(),
            weights: None,
        }
    }
}

/// Corpus sizes and optional corpus files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Pairs used for probing and change-rate analysis.
    pub probe_scenes: usize,
    /// Presence questions used for evaluation.
    pub eval_scenes: usize,
    /// Scenes used for the caption query search.
    pub search_scenes: usize,
    /// JSON Lines file replacing the generated evaluation corpus.
    pub eval_corpus: Option<PathBuf>,
    /// Caption query candidates; the built-in list when absent.
    pub candidates: Option<Vec<Vec<usize>>>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            probe_scenes: 100,
            eval_scenes: 200,
            search_scenes: 20,
            eval_corpus: None,
            candidates: None,
        }
    }
}

/// Classifier settings; the seed comes from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub folds: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let p = ClassifierParams::default();
        Self {
            folds: p.folds,
            iterations: p.iterations,
            learning_rate: p.learning_rate,
            l2: p.l2,
        }
    }
}

fn default_alpha() -> f64 {
    1.5
}

fn default_alpha_grid() -> Vec<f64> {
    vec![-0.5, 0.0, 0.75, 1.5, 3.0]
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Defaults to [`default_top_k`] of the head count.
    #[serde(default)]
    pub top_k: Option<i64>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    /// Defaults to `{0, top_k, ¼, ½, all}` of the head count.
    #[serde(default)]
    pub k_grid: Option<Vec<i64>>,
    #[serde(default)]
    pub positions: ShiftPositions,
    #[serde(default)]
    pub shift_mode: ShiftMode,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            model: ModelSection::default(),
            corpus: CorpusSection::default(),
            classifier: ClassifierSection::default(),
            alpha: default_alpha(),
            top_k: None,
            alpha_grid: default_alpha_grid(),
            k_grid: None,
            positions: ShiftPositions::default(),
            shift_mode: ShiftMode::default(),
            out_dir: None,
        }
    }

    /// Parses and validates a config document.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Json`] for malformed JSON or unknown keys,
    /// [`crate::Error::Config`] for invalid values.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    ///
    /// # Errors
    ///
    /// I/O errors plus those of [`RunConfig::from_json_slice`].
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cfg = Self::from_json_slice(&bytes)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("config serializes");
        out.push(b'\n');
        out
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.model.weights);
        fix(&mut self.corpus.eval_corpus);
        fix(&mut self.out_dir);
    }

    /// # Errors
    ///
    /// [`crate::Error::Config`] naming the first invalid value.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config(format!(
                "unsupported schema_version {}; expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.check_limits()?;
        if !self.alpha.is_finite() {
            return Err(config("alpha must be finite"));
        }
        if let Some(k) = self.top_k {
            if k < 0 {
                return Err(config(format!("top_k must be non-negative, got {k}")));
            }
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !a.is_finite()) {
            return Err(config("alpha_grid must be non-empty and finite"));
        }
        if let Some(g) = &self.k_grid {
            if g.is_empty() || g.iter().any(|&k| k < 0) {
                return Err(config("k_grid must be non-empty and non-negative"));
            }
        }
        let c = &self.corpus;
        if c.probe_scenes < 2 || c.eval_scenes == 0 || c.search_scenes == 0 {
            return Err(config(
                "need at least 2 probe scenes and 1 evaluation and search scene",
            ));
        }
        if matches!(&c.candidates, Some(v) if v.is_empty() || v.iter().any(Vec::is_empty)) {
            return Err(config("caption candidates must be non-empty"));
        }
        self.classifier_params().validate()?;
        self.planted_spec()?.validate()
    }

    fn check_limits(&self) -> Result<()> {
        let m = &self.model;
        let c = &self.corpus;
        let heads = m.num_layers.checked_mul(m.num_heads);
        let dim = m.num_heads.checked_mul(m.head_dim);
        let within = |v: Option<usize>, cap: usize| v.is_some_and(|v| v <= cap);
        if !(within(heads, MAX_HEADS) && within(dim, MAX_DIM)) {
            return Err(config(format!(
                "model too large: at most {MAX_HEADS} heads and model_dim {MAX_DIM}"
            )));
        }
        if m.max_seq_len > MAX_SEQ_LEN || m.vocab.num_objects > MAX_OBJECTS {
            return Err(config(format!(
                "max_seq_len is capped at {MAX_SEQ_LEN} and num_objects at {MAX_OBJECTS}"
            )));
        }
        if [c.probe_scenes, c.eval_scenes, c.search_scenes]
            .iter()
            .any(|&n| n > MAX_SCENES)
        {
            return Err(config(format!("corpus sizes are capped at {MAX_SCENES}")));
        }
        let cl = &self.classifier;
        if cl.iterations > MAX_ITERATIONS || cl.folds > c.probe_scenes.max(2) {
            return Err(config("classifier iterations or folds out of range"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig::new(
            m.num_layers,
            m.num_heads,
            m.head_dim,
            m.vocab.vocab_size(),
            m.max_seq_len,
        )
    }

    pub fn total_heads(&self) -> usize {
        self.model.num_layers * self.model.num_heads
    }

    /// The planted spec, drawing planted heads from the run seed unless
    /// they are listed.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Config`] when too many heads are requested.
    pub fn planted_spec(&self) -> Result<PlantedModelSpec> {
        let m = &self.model;
        let mut spec = PlantedModelSpec {
            config: self.model_config(),
            planted: Vec::new(),
            strength: m.strength,
            circuit: m.circuit,
            vocab: m.vocab,
            scene: m.scene,
        };
        spec.planted = match &m.planted {
            Some(list) => list.clone(),
            None => spec.choose_planted(m.num_planted, derive_seed(self.seed, "planted"))?,
        };
        Ok(spec)
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        let c = &self.classifier;
        ClassifierParams {
            folds: c.folds,
            iterations: c.iterations,
            learning_rate: c.learning_rate,
            l2: c.l2,
            seed: derive_seed(self.seed, "classifier"),
        }
    }

    pub fn effective_top_k(&self) -> i64 {
        self.top_k.unwrap_or(default_top_k(self.total_heads()) as i64)
    }

    /// The K grid, sorted with duplicates removed.
    pub fn effective_k_grid(&self) -> Vec<i64> {
        let n = self.total_heads() as i64;
        let mut g = self
            .k_grid
            .clone()
            .unwrap_or_else(|| vec![0, self.effective_top_k(), n / 4, n / 2, n]);
        g.sort_unstable();
        g.dedup();
        g
    }
}

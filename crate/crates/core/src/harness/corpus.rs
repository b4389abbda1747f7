// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic scenes and paired caption/non-caption queries.

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::planted::PlantedModelSpec;
use super::vocab::{default_caption_candidates, Layout, MARKER};
use crate::error::{config, Error, Result};
use crate::model::SequenceInput;
use crate::tensor::{Matrix, Vector};

/// Continuous scene statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    /// Total standard deviation of the distractor noise before normalizing.
    pub noise_scale: f64,
    /// Half-width of the per-object salience range.
    pub salience: f64,
    /// Half-width of the per-scene visual amplitude range around 1.
    pub amplitude_jitter: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            noise_scale: 0.5,
            salience: 0.6,
            amplitude_jitter: 0.5,
        }
    }
}

impl SceneParams {
    pub(crate) fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.noise_scale) && ok(self.salience) && ok(self.amplitude_jitter)) {
            return Err(config("scene parameters must be finite and non-negative"));
        }
        if self.amplitude_jitter >= 1.0 {
            return Err(config("amplitude_jitter must be below 1"));
        }
        Ok(())
    }

    /// Typical visual coordinate after normalization; the planted circuit
    /// divides by it so attention scores come out near unit scale.
    pub(crate) fn visual_scale(&self) -> f64 {
        1.0 / (2.0 + self.salience * self.salience / 3.0 + self.noise_scale * self.noise_scale).sqrt()
    }
}

/// One scene: an embedding row per present object.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    seed: u64,
    objects: Vec<(usize, Vector)>,
    noise_scale: f64,
}

impl SyntheticScene {
    /// Rebuilds the scene for `seed` and the given objects.
    pub(crate) fn generate(seed: u64, objects: &[usize], layout: &Layout, params: &SceneParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = layout.noise();
        let sd = if noise.is_empty() {
            0.0
        } else {
            params.noise_scale / (noise.len() as f64).sqrt()
        };
        let normal = Normal::new(0.0, sd).expect("finite non-negative sd");
        let j = params.amplitude_jitter;
        let amp = rng.random_range(1.0 - j..=1.0 + j);
        let rows = objects
            .iter()
            .map(|&o| {
                let mut x = vec![0.0; layout.model_dim];
                x[layout.obj(o)] = 1.0;
                x[layout.vis] = amp;
                x[layout.sal] = params.salience * rng.random_range(-1.0..=1.0);
                for i in noise.clone() {
                    x[i] = normal.sample(&mut rng);
                }
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x.iter_mut().for_each(|v| *v /= n);
                (o, Vector::from(x))
            })
            .collect();
        Self {
            seed,
            objects: rows,
            noise_scale: params.noise_scale,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// `(object id, embedding)` per slot.
    pub fn slots(&self) -> &[(usize, Vector)] {
        &self.objects
    }

    pub fn object_ids(&self) -> Vec<usize> {
        self.objects.iter().map(|(o, _)| *o).collect()
    }

    pub fn contains(&self, object: usize) -> bool {
        self.objects.iter().any(|(o, _)| *o == object)
    }

    /// Visual prefix, one row per slot.
    pub fn embeddings(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.objects.iter().map(|(_, v)| v.as_slice().to_vec()).collect();
        Matrix::from_rows(&rows).expect("slots share model_dim")
    }
}

/// Gold answer of a presence question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn is_yes(self) -> bool {
        self == Self::Yes
    }
}

/// Caption query and presence question over one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPair {
    pub caption: Vec<usize>,
    pub non_caption: Vec<usize>,
    pub gold: Answer,
}

/// A scene with its query pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub scene: SyntheticScene,
    pub query: QueryPair,
}

impl CorpusEntry {
    /// # Errors
    ///
    /// Shape errors from [`SequenceInput::new`].
    pub fn caption_input(&self) -> Result<SequenceInput> {
        SequenceInput::new(self.scene.embeddings(), self.query.caption.clone())
    }

    /// # Errors
    ///
    /// Shape errors from [`SequenceInput::new`].
    pub fn non_caption_input(&self) -> Result<SequenceInput> {
        SequenceInput::new(self.scene.embeddings(), self.query.non_caption.clone())
    }

    /// `(caption, non-caption)` inputs for probing.
    ///
    /// # Errors
    ///
    /// Shape errors from [`SequenceInput::new`].
    pub fn probe_pair(&self) -> Result<(SequenceInput, SequenceInput)> {
        Ok((self.caption_input()?, self.non_caption_input()?))
    }

    /// Same entry with another caption query.
    pub fn with_caption(&self, caption: &[usize]) -> Self {
        let mut e = self.clone();
        e.query.caption = caption.to_vec();
        e
    }
}

/// Generates `num_scenes` scenes with balanced yes/no presence questions.
///
/// Caption queries use the first built-in candidate. Yes answers number
/// `ceil(num_scenes / 2)`.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for zero scenes, [`Error::Config`] for an
/// invalid vocabulary or scene spec.
pub fn generate_corpus(seed: u64, num_scenes: usize, spec: &PlantedModelSpec) -> Result<Vec<CorpusEntry>> {
    if num_scenes == 0 {
        return Err(Error::EmptyDataset("corpus needs at least one scene".into()));
    }
    let vocab = &spec.vocab;
    vocab.validate()?;
    spec.scene.validate()?;
    let layout = Layout::new(vocab.num_objects, spec.config.model_dim)?;
    let caption = default_caption_candidates().swap_remove(0);
    debug_assert!(caption.contains(&MARKER));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut golds: Vec<Answer> = (0..num_scenes)
        .map(|i| {
            if i < num_scenes.div_ceil(2) {
                Answer::Yes
            } else {
                Answer::No
            }
        })
        .collect();
    golds.shuffle(&mut rng);

    golds
        .into_iter()
        .map(|gold| {
            let m = rng.random_range(vocab.min_objects..=vocab.max_objects);
            let mut objects = index::sample(&mut rng, vocab.num_objects, m).into_vec();
            objects.sort_unstable();
            let scene_seed: u64 = rng.random();
            let pool: Vec<usize> = (0..vocab.num_objects)
                .filter(|o| objects.contains(o) == gold.is_yes())
                .collect();
            let probed = *pool.choose(&mut rng).expect("max_objects < num_objects");
            Ok(CorpusEntry {
                scene: SyntheticScene::generate(scene_seed, &objects, &layout, &spec.scene),
                query: QueryPair {
                    caption: caption.clone(),
                    non_caption: vocab.presence_question(probed),
                    gold,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_unit_norm() {
        let spec = PlantedModelSpec::default();
        let c = generate_corpus(1, 5, &spec).unwrap();
        for e in &c {
            for (_, v) in e.scene.slots() {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_corpus_is_balanced_within_one() {
        let spec = PlantedModelSpec::default();
        let c = generate_corpus(3, 7, &spec).unwrap();
        let yes = c.iter().filter(|e| e.query.gold.is_yes()).count();
        assert_eq!(yes, 4);
    }

    #[test]
    fn zero_scenes_rejected() {
        assert!(matches!(
            generate_corpus(0, 0, &PlantedModelSpec::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn answers_match_scene_contents() {
        let spec = PlantedModelSpec::default();
        for e in generate_corpus(11, 40, &spec).unwrap() {
            let probed = spec.vocab.token_object(e.query.non_caption[2]).unwrap();
            assert_eq!(e.scene.contains(probed), e.query.gold.is_yes());
        }
    }
}

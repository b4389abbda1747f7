// SPDX-License-Identifier: MIT OR Apache-2.0

//! The persisted probe result: accuracies, selected heads and shift vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{rank_heads, ClassifierParams, HeadRanking, ShiftVectorBank};
use crate::error::{config, shape, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::tensor::Vector;

/// One selected head with its accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedHead {
    pub layer: usize,
    pub head: usize,
    pub accuracy: f64,
}

/// How the per-head classifiers were trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierMeta {
    pub loss: String,
    pub l2: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub schedule: String,
    pub folds: usize,
    pub split: String,
    pub standardization: String,
    pub seed: u64,
}

impl ClassifierMeta {
    pub fn from_params(p: &ClassifierParams) -> Self {
        Self {
            loss: "hinge".into(),
            l2: p.l2,
            iterations: p.iterations,
            learning_rate: p.learning_rate,
            schedule: "lr/t".into(),
            folds: p.folds,
            split: "pair_grouped_stratified".into(),
            standardization: "train_fold_mean_std".into(),
            seed: p.seed,
        }
    }
}

/// JSON probe artifact; everything the intervention needs at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeArtifact {
    pub model_hash: String,
    /// `accuracies[layer][head]`.
    pub accuracies: Vec<Vec<f64>>,
    pub top_k: Vec<RankedHead>,
    /// Keyed `"layer:head"`, one entry per head.
    pub shift_vectors: BTreeMap<String, Vec<f64>>,
    pub classifier_meta: ClassifierMeta,
}

impl ProbeArtifact {
    /// # Errors
    ///
    /// [`crate::Error::Provenance`] when ranking and bank name different
    /// models, [`crate::Error::Shape`] when their grids differ.
    pub fn new(ranking: &HeadRanking, bank: &ShiftVectorBank, meta: ClassifierMeta) -> Result<Self> {
        if ranking.model_hash() != bank.model_hash() {
            return Err(crate::Error::Provenance(format!(
                "ranking from model {} but shift vectors from {}",
                ranking.model_hash(),
                bank.model_hash()
            )));
        }
        if !ranking.accuracies().same_shape(bank.shifts()) {
            return Err(shape("ranking and shift bank differ in shape"));
        }
        Ok(Self {
            model_hash: ranking.model_hash().to_string(),
            accuracies: ranking.accuracies().to_rows(),
            top_k: ranking
                .top_k()
                .iter()
                .map(|&id| RankedHead {
                    layer: id.layer,
                    head: id.head,
                    accuracy: *ranking.accuracies().get(id),
                })
                .collect(),
            shift_vectors: bank
                .shifts()
                .iter()
                .map(|(id, v)| (id.to_string(), v.as_slice().to_vec()))
                .collect(),
            classifier_meta: meta,
        })
    }

    /// Parses and validates an artifact.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Json`] on malformed JSON; [`crate::Error::Shape`] or
    /// [`crate::Error::Config`] when the contents are inconsistent.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let a: Self = serde_json::from_slice(bytes)?;
        a.validate()?;
        Ok(a)
    }

    /// Pretty-printed JSON.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("artifact serializes");
        v.push(b'\n');
        v
    }

    fn accuracy_grid(&self) -> Result<HeadGrid<f64>> {
        HeadGrid::from_rows(self.accuracies.clone())
    }

    /// Checks internal consistency.
    ///
    /// # Errors
    ///
    /// See [`ProbeArtifact::from_json_slice`].
    pub fn validate(&self) -> Result<()> {
        let acc = self.accuracy_grid()?;
        if acc.values().iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(config("accuracies must lie in [0, 1]"));
        }
        self.bank_grid(&acc)?;
        let expected = rank_heads(&acc, self.top_k.len() as i64)?;
        if self.top_k.len() != expected.k() {
            return Err(config("top_k lists more heads than the model has"));
        }
        for (r, &want) in self.top_k.iter().zip(expected.top_k()) {
            if HeadId::new(r.layer, r.head) != want || r.accuracy != *acc.get(want) {
                return Err(config(format!(
                    "top_k entry {}:{} disagrees with the accuracy ranking",
                    r.layer, r.head
                )));
            }
        }
        Ok(())
    }

    fn bank_grid(&self, acc: &HeadGrid<f64>) -> Result<HeadGrid<Vector>> {
        if self.shift_vectors.len() != acc.len() {
            return Err(shape(format!(
                "{} shift vectors for {} heads",
                self.shift_vectors.len(),
                acc.len()
            )));
        }
        let mut cells: HeadGrid<Option<Vector>> = HeadGrid::filled(acc.num_layers(), acc.num_heads(), None);
        for (key, v) in &self.shift_vectors {
            let id: HeadId = key.parse()?;
            if !acc.contains(id) {
                return Err(config(format!("shift vector key {key} outside the model")));
            }
            let slot = cells.get_mut(id);
            if slot.is_some() {
                return Err(config(format!("shift vector for head {id} given twice")));
            }
            *slot = Some(Vector::from(v.clone()));
        }
        let grid = cells.map(|_, v| v.clone().expect("every key is distinct and in range"));
        let d = grid.values()[0].dim();
        if d == 0 || grid.values().iter().any(|v| v.dim() != d || !v.all_finite()) {
            return Err(shape("shift vectors must share one non-zero finite length"));
        }
        Ok(grid)
    }

    /// Ranking with `k` selected heads; `None` keeps the stored top-k size.
    ///
    /// # Errors
    ///
    /// As [`rank_heads`], plus validation errors.
    pub fn ranking(&self, k: Option<i64>) -> Result<HeadRanking> {
        let acc = self.accuracy_grid()?;
        let k = k.unwrap_or(self.top_k.len() as i64);
        Ok(rank_heads(&acc, k)?.with_model_hash(self.model_hash.clone()))
    }

    /// Shift vectors as a bank.
    ///
    /// # Errors
    ///
    /// Validation errors.
    pub fn bank(&self) -> Result<ShiftVectorBank> {
        let acc = self.accuracy_grid()?;
        ShiftVectorBank::new(self.model_hash.clone(), self.bank_grid(&acc)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn sample() -> ProbeArtifact {
        let acc = HeadGrid::from_rows(vec![vec![0.5, 0.75], vec![1.0, 0.25]]).unwrap();
        let ranking = rank_heads(&acc, 2).unwrap().with_model_hash("abc");
        let bank = ShiftVectorBank::new(
            "abc".into(),
            HeadGrid::from_fn(2, 2, |id| Vector::from(vec![id.layer as f64, -0.5])),
        )
        .unwrap();
        ProbeArtifact::new(
            &ranking,
            &bank,
            ClassifierMeta::from_params(&ClassifierParams::default()),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let back = ProbeArtifact::from_json_slice(&a.to_json_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.top_k[0].layer, 1);
        assert_eq!(
            back.ranking(None).unwrap().top_k(),
            &[HeadId::new(1, 0), HeadId::new(0, 1)]
        );
        assert_eq!(back.ranking(Some(1)).unwrap().k(), 1);
        assert_eq!(
            back.bank().unwrap().get(HeadId::new(1, 1)).as_slice(),
            &[1.0, -0.5]
        );
    }

    #[test]
    fn provenance_mismatch() {
        let acc = HeadGrid::filled(1, 1, 0.5);
        let ranking = rank_heads(&acc, 1).unwrap().with_model_hash("a");
        let bank = ShiftVectorBank::new("b".into(), HeadGrid::filled(1, 1, Vector::zeros(2))).unwrap();
        let err = ProbeArtifact::new(
            &ranking,
            &bank,
            ClassifierMeta::from_params(&ClassifierParams::default()),
        );
        assert!(matches!(err, Err(Error::Provenance(_))));
    }

    #[test]
    fn tampered_artifacts_rejected() {
        let mut a = sample();
        a.top_k.reverse();
        assert!(a.validate().is_err());

        let mut a = sample();
        a.shift_vectors.remove("0:0");
        assert!(a.validate().is_err());

        let mut a = sample();
        a.shift_vectors.insert("0:0".into(), vec![1.0]);
        assert!(a.validate().is_err());

        let mut a = sample();
        a.accuracies[0][0] = 1.5;
        assert!(a.validate().is_err());

        let mut a = sample();
        a.shift_vectors.remove("0:0");
        a.shift_vectors.insert("0:9".into(), vec![1.0, 2.0]);
        assert!(a.validate().is_err());

        let mut a = sample();
        a.shift_vectors.remove("0:1");
        a.shift_vectors.insert("00:0".into(), vec![1.0, 2.0]);
        assert!(matches!(a.validate(), Err(Error::Config(_))));
    }
}

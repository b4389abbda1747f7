// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON weight files and the model hash.
//!
//! Layout: `{config, layers: [{heads: [{wq, wk, wv}], wo}], embedding,
//! readout}` with every matrix flattened row-major. The schema lives in
//! `docs/weights.schema.json`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecoderWeights, HeadWeights, LayerWeights, ModelConfig};
use crate::error::{shape, Result};
use crate::tensor::{Matrix, Vector};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadFile {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    heads: Vec<HeadFile>,
    wo: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    config: ModelConfig,
    layers: Vec<LayerFile>,
    embedding: Vec<f64>,
    readout: Vec<f64>,
}

fn matrix(data: Vec<f64>, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    Matrix::new(rows, cols, data).map_err(|e| shape(format!("{what}: {e}")))
}

impl DecoderWeights {
    /// Compact JSON encoding. Stable across runs, so it doubles as the
    /// input to [`DecoderWeights::model_hash`].
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = WeightsFile {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadFile {
                            wq: h.wq.as_slice().to_vec(),
                            wk: h.wk.as_slice().to_vec(),
                            wv: h.wv.as_slice().to_vec(),
                        })
                        .collect(),
                    wo: l.wo.as_slice().to_vec(),
                })
                .collect(),
            embedding: self.embedding.as_slice().to_vec(),
            readout: self.readout.as_slice().to_vec(),
        };
        serde_json::to_vec(&file).expect("weights are finite and serialize")
    }

    /// Parses and validates a weight file.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Json`] on malformed JSON, otherwise the errors of
    /// [`DecoderWeights::new`].
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: WeightsFile = serde_json::from_slice(bytes)?;
        let cfg = file.config;
        cfg.validate()?;
        let (dm, d) = (cfg.model_dim, cfg.head_dim);
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(l, lf)| {
                let heads = lf
                    .heads
                    .into_iter()
                    .enumerate()
                    .map(|(h, hf)| {
                        Ok(HeadWeights {
                            wq: matrix(hf.wq, dm, d, &format!("layer {l} head {h} wq"))?,
                            wk: matrix(hf.wk, dm, d, &format!("layer {l} head {h} wk"))?,
                            wv: matrix(hf.wv, dm, d, &format!("layer {l} head {h} wv"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LayerWeights {
                    heads,
                    wo: matrix(lf.wo, dm, dm, &format!("layer {l} wo"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let embedding = matrix(file.embedding, cfg.vocab_size, dm, "embedding")?;
        Self::new(cfg, layers, embedding, Vector::from(file.readout))
    }

    /// Hex SHA-256 of [`DecoderWeights::to_json_bytes`].
    pub fn model_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_bytes()))
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use capattn_core::model::{DecoderWeights, HeadWeights, LayerWeights, ModelConfig, SequenceInput};
use capattn_core::tensor::{Matrix, Vector};

/// Deterministic uniform(-1, 1) stream.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    pub fn vec(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * self.next()).collect()
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, scale: f64) -> Matrix {
        Matrix::new(rows, cols, self.vec(rows * cols, scale)).unwrap()
    }
}

pub fn random_model(nl: usize, nh: usize, d: usize, vocab: usize, seed: u64) -> DecoderWeights {
    let cfg = ModelConfig::new(nl, nh, d, vocab, 16);
    let dm = cfg.model_dim;
    let mut g = Lcg(seed);
    let layers = (0..nl)
        .map(|_| LayerWeights {
            heads: (0..nh)
                .map(|_| HeadWeights {
                    wq: g.matrix(dm, d, 0.8),
                    wk: g.matrix(dm, d, 0.8),
                    wv: g.matrix(dm, d, 0.8),
                })
                .collect(),
            wo: g.matrix(dm, dm, 0.3),
        })
        .collect();
    let embedding = g.matrix(vocab, dm, 1.0);
    let readout = Vector::from(g.vec(dm, 1.0));
    DecoderWeights::new(cfg, layers, embedding, readout).unwrap()
}

pub fn random_input(w: &DecoderWeights, m: usize, tokens: Vec<usize>, seed: u64) -> SequenceInput {
    let mut g = Lcg(seed);
    SequenceInput::new(g.matrix(m, w.config().model_dim, 1.0), tokens).unwrap()
}

/// `rows × cols` product by three nested loops.
pub fn naive_product(a: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
    (0..a.rows())
        .map(|i| {
            (0..b.cols())
                .map(|j| {
                    let mut s = 0.0;
                    for k in 0..a.cols() {
                        s += a.get(i, k) * b.get(k, j);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

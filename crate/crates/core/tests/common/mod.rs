#![allow(dead_code)]

use diarkit_core::{FeatureMatrix, Matrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `n` rows of i.i.d. N(mean, 1) in `d` dimensions.
pub fn gaussian_rows<R: Rng>(rng: &mut R, n: usize, d: usize, mean: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + z
                })
                .collect()
        })
        .collect()
}

/// 10 ms hop, 25 ms frame at 16 kHz.
pub fn feature_matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix {
        vectors: Matrix::from_rows(rows).unwrap(),
        frame_times_s: (0..rows.len()).map(|t| 0.0125 + 0.01 * t as f64).collect(),
        frame_ms: 25.0,
        hop_ms: 10.0,
        frame_len: 400,
        hop: 160,
        sample_rate_hz: 16000,
        source_id: "synthetic".into(),
    }
}

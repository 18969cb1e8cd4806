use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Text,
    Noise,
}

/// A conditioning vector for the code predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFeature {
    pub vector: Vec<f32>,
    pub kind: SignalKind,
}

/// `dim` independent standard-normal draws.
pub fn sample_noise_signal(seed: u64, dim: usize) -> SignalFeature {
    let mut rng = rng_from(seed);
    SignalFeature {
        vector: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
        kind: SignalKind::Noise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_tagged() {
        let a = sample_noise_signal(4, 64);
        assert_eq!(a, sample_noise_signal(4, 64));
        assert_ne!(a, sample_noise_signal(5, 64));
        assert_eq!(a.kind, SignalKind::Noise);
        assert_eq!(a.vector.len(), 64);
    }

    #[test]
    fn moments_over_many_draws() {
        let dim = 4;
        let n = 100_000;
        let mut sum = vec![0f64; dim];
        let mut sq = vec![0f64; dim];
        for s in 0..n {
            let v = sample_noise_signal(crate::rng::derive_seed(77, s), dim).vector;
            for d in 0..dim {
                sum[d] += v[d] as f64;
                sq[d] += (v[d] as f64).powi(2);
            }
        }
        for d in 0..dim {
            let mean = sum[d] / n as f64;
            let var = sq[d] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attrs::{DescribedMask, MotionAttributes, Speed};
use super::caption::{caption_of, CaptionTokens};
use super::motion::{MotionSequence, DEFAULT_FEATURE_DIM, DEFAULT_FRAME_RATE};
use super::render::MotionRenderer;
use crate::error::{Error, Result};
use crate::rng;

/// Shortest admissible motion; equals the default codec downsample rate.
pub const MIN_MOTION_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_samples: usize,
    pub feature_dim: usize,
    pub frame_rate: f32,
    pub length_range: (usize, usize),
    pub described_attribute_probability: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_samples: 2000,
            feature_dim: DEFAULT_FEATURE_DIM,
            frame_rate: DEFAULT_FRAME_RATE,
            length_range: (32, 64),
            described_attribute_probability: 0.5,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        let (lo, hi) = self.length_range;
        if lo < MIN_MOTION_LEN || hi < lo {
            return Err(Error::Config(format!(
                "length range [{lo}, {hi}] invalid (minimum length {MIN_MOTION_LEN})"
            )));
        }
        if !(0.0..=1.0).contains(&self.described_attribute_probability) {
            return Err(Error::Config("described_attribute_probability must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Length window for a speed class: slow motions run long, fast ones short.
    pub fn speed_length_window(&self, speed: Speed) -> (usize, usize) {
        let (lo, hi) = self.length_range;
        let span = hi - lo;
        match speed {
            Speed::Slow => (lo + span / 2, hi),
            Speed::Normal => (lo + span / 4, hi - span / 4),
            Speed::Fast => (lo, lo + span / 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub caption: CaptionTokens,
    pub motion: MotionSequence,
    pub attrs: MotionAttributes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub frame_rate: f32,
    pub length_range: (usize, usize),
    pub samples: Vec<Sample>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.train_indices.iter().map(|&i| &self.samples[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.test_indices.iter().map(|&i| &self.samples[i])
    }

    /// Per-channel mean and (population) standard deviation over all frames.
    pub fn channel_stats<'a>(samples: impl Iterator<Item = &'a Sample>, dim: usize) -> (Vec<f32>, Vec<f32>) {
        let mut sum = vec![0f64; dim];
        let mut sq = vec![0f64; dim];
        let mut n = 0usize;
        for s in samples {
            for t in 0..s.motion.len() {
                for (c, &v) in s.motion.frame(t).iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0)).sqrt() as f32)
            .collect();
        (mean.into_iter().map(|m| m as f32).collect(), std)
    }
}

/// Seeded train/test split; both index lists come back sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from(rng::labeled_seed(seed, "split")));
    let n_test = if n < 2 { 0 } else { ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1) };
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub fn generate_sample(spec: &CorpusSpec, renderer: &MotionRenderer, index: usize) -> Result<Sample> {
    let seed = rng::derive_seed(spec.seed, index as u64);
    let mut rng = rng::rng_from(seed);
    let attrs = MotionAttributes::sample(&mut rng);
    let mut mask = DescribedMask::NONE;
    for flag in [
        DescribedMask::GAIT,
        DescribedMask::DIRECTION,
        DescribedMask::SPEED,
        DescribedMask::POSTURE,
    ] {
        if rng.random_bool(spec.described_attribute_probability) {
            mask = mask.with(flag);
        }
    }
    let (lo, hi) = spec.speed_length_window(attrs.speed);
    let length = rng.random_range(lo..=hi);
    let caption = caption_of(&attrs, mask, rng.random());
    let motion = renderer.render(&attrs, length, rng.random())?;
    Ok(Sample {
        caption,
        motion,
        attrs,
    })
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    let renderer = MotionRenderer::new(spec.feature_dim, spec.frame_rate, spec.length_range)?;
    let samples = (0..spec.n_samples)
        .map(|i| generate_sample(spec, &renderer, i))
        .collect::<Result<Vec<_>>>()?;
    let (train_indices, test_indices) = split_indices(spec.n_samples, spec.test_fraction, spec.seed);
    Ok(Dataset {
        feature_dim: spec.feature_dim,
        frame_rate: spec.frame_rate,
        length_range: spec.length_range,
        samples,
        train_indices,
        test_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p: f64) -> CorpusSpec {
        CorpusSpec {
            n_samples: n,
            described_attribute_probability: p,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_corpus(&spec(100, 0.5)).unwrap();
        let b = generate_corpus(&spec(100, 0.5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_indices.len(), 90);
        assert_eq!(a.test_indices.len(), 10);
    }

    #[test]
    fn full_description() {
        let d = generate_corpus(&spec(200, 1.0)).unwrap();
        assert!(d.samples.iter().all(|s| s.caption.described == DescribedMask::ALL));
        assert!(d.samples.iter().all(|s| s.caption.decode().mask() == DescribedMask::ALL));
    }

    #[test]
    fn mean_described_count_is_binomial() {
        // 4 Bernoulli(0.5) flags per sample: mean 2, sd of the mean 1/sqrt(10000) = 0.01
        let mut s = spec(10_000, 0.5);
        s.feature_dim = 12;
        s.length_range = (4, 8);
        let d = generate_corpus(&s).unwrap();
        let mean = d.samples.iter().map(|s| s.caption.described.count() as f64).sum::<f64>() / 10_000.0;
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn lengths_follow_speed() {
        let d = generate_corpus(&spec(300, 0.5)).unwrap();
        let mean = |sp: Speed| {
            let v: Vec<usize> = d.samples.iter().filter(|s| s.attrs.speed == sp).map(|s| s.motion.len()).collect();
            v.iter().sum::<usize>() as f64 / v.len() as f64
        };
        assert!(mean(Speed::Fast) < mean(Speed::Normal));
        assert!(mean(Speed::Normal) < mean(Speed::Slow));
        assert!(d.samples.iter().all(|s| (32..=64).contains(&s.motion.len())));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_corpus(&spec(0, 0.5)).is_err());
        let mut s = spec(10, 0.5);
        s.length_range = (2, 8);
        assert!(matches!(generate_corpus(&s), Err(Error::Config(_))));
    }
}

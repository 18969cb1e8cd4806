//! Length stochastic enhancement: uniform time scaling with linear
//! interpolation. Every channel is resampled on the same time grid.

use rand::Rng;

use super::motion::MotionSequence;
use crate::error::{Error, Result};

pub const DEFAULT_SCALE_RANGE: (f32, f32) = (0.8, 1.25);

/// Stretch or compress `motion` by a factor drawn uniformly from
/// `scale_range`, clipped so the output length lands in `length_range`.
pub fn length_augment(
    motion: &MotionSequence,
    scale_range: (f32, f32),
    length_range: (usize, usize),
    seed: u64,
) -> Result<MotionSequence> {
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Argument(format!("bad scale range [{lo}, {hi}]")));
    }
    if motion.is_empty() {
        return Err(Error::Argument("cannot augment an empty motion".into()));
    }
    let s = if lo == hi {
        lo
    } else {
        crate::rng::rng_from(seed).random_range(lo..=hi)
    };
    let t = motion.len() as f32;
    let s = s.clamp(length_range.0 as f32 / t, length_range.1 as f32 / t);
    time_scale(motion, s)
}

/// Resample to `round(T * scale)` frames. Output frame `j` reads the input at
/// time `j / scale`, clamped to the last frame.
pub fn time_scale(motion: &MotionSequence, scale: f32) -> Result<MotionSequence> {
    if motion.is_empty() {
        return Err(Error::Argument("cannot scale an empty motion".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::Argument(format!("scale {scale} must be positive")));
    }
    let n = motion.len();
    let out_len = ((n as f32 * scale).round() as usize).max(1);
    if out_len == n && scale == 1.0 {
        return Ok(motion.clone());
    }
    let d = motion.dim();
    let step = n as f64 / out_len as f64;
    let mut frames = Vec::with_capacity(out_len * d);
    for j in 0..out_len {
        let x = (j as f64 * step).min((n - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let frac = (x - i0 as f64) as f32;
        let (a, b) = (motion.frame(i0), motion.frame(i1));
        frames.extend(a.iter().zip(b).map(|(&a, &b)| if frac == 0.0 { a } else { a + frac * (b - a) }));
    }
    MotionSequence::new(frames, d, motion.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(len: usize, dim: usize) -> MotionSequence {
        let frames = (0..len * dim).map(|i| ((i * 7919) % 13) as f32 - 6.0).collect();
        MotionSequence::new(frames, dim, 20.0).unwrap()
    }

    /// Independent oracle: interpolate one channel directly from the definition.
    fn oracle(values: &[f32], out_len: usize) -> Vec<f32> {
        let n = values.len();
        (0..out_len)
            .map(|j| {
                let x = j as f64 * n as f64 / out_len as f64;
                let x = if x > (n - 1) as f64 { (n - 1) as f64 } else { x };
                let lo = x.floor() as usize;
                let hi = if lo + 1 < n { lo + 1 } else { lo };
                let w = x - lo as f64;
                ((1.0 - w) * values[lo] as f64 + w * values[hi] as f64) as f32
            })
            .collect()
    }

    #[test]
    fn identity_scale() {
        let m = ramp(20, 3);
        assert_eq!(length_augment(&m, (1.0, 1.0), (1, 100), 9).unwrap(), m);
    }

    #[test]
    fn doubling_hits_input_frames() {
        let m = ramp(8, 4);
        let out = time_scale(&m, 2.0).unwrap();
        assert_eq!(out.len(), 16);
        for k in 0..8 {
            assert_eq!(out.frame(2 * k), m.frame(k));
        }
        for c in 0..4 {
            let ch: Vec<f32> = m.channel(c).collect();
            let got: Vec<f32> = out.channel(c).collect();
            for (g, e) in got.iter().zip(oracle(&ch, 16)) {
                assert!((g - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn halving_stays_in_range() {
        let m = ramp(10, 5);
        let out = time_scale(&m, 0.5).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.is_finite());
        for c in 0..5 {
            let (lo, hi) = m.channel(c).fold((f32::MAX, f32::MIN), |(l, h), v| (l.min(v), h.max(v)));
            assert!(out.channel(c).all(|v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn empty_motion_rejected() {
        let m = MotionSequence::zeros(0, 4, 20.0);
        assert!(matches!(length_augment(&m, (0.8, 1.2), (1, 10), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn output_length_is_clipped() {
        let m = ramp(60, 2);
        for seed in 0..20 {
            let out = length_augment(&m, (0.5, 2.0), (32, 64), seed).unwrap();
            assert!((32..=64).contains(&out.len()), "{}", out.len());
        }
    }

    proptest! {
        #[test]
        fn convex_and_finite(len in 1usize..40, scale in 0.3f32..3.0, seed in any::<u64>()) {
            let m = ramp(len, 3);
            let out = length_augment(&m, (scale, scale * 1.1), (1, 200), seed).unwrap();
            prop_assert!(out.is_finite());
            for c in 0..3 {
                let (lo, hi) = m.channel(c).fold((f32::MAX, f32::MIN), |(l, h), v| (l.min(v), h.max(v)));
                prop_assert!(out.channel(c).all(|v| v >= lo - 1e-5 && v <= hi + 1e-5));
            }
        }
    }
}

//! Procedural motion renderer.
//!
//! Channel layout (`d >= 12`):
//!
//! | channels  | driven by           |
//! |-----------|---------------------|
//! | 0..4      | gait (and speed)    |
//! | 4..6      | direction (and speed) |
//! | 6..8      | speed               |
//! | 8..10     | posture             |
//! | 10..d     | free phase / amplitude (and speed) |
//!
//! A small seeded jitter (std [`JITTER_STD`]) is added to every entry.

use std::f32::consts::{PI, TAU};
use std::ops::Range;

use rand_distr::{Distribution, Normal};

use super::attrs::{Direction, Gait, MotionAttributes, Posture, Speed};
use super::motion::MotionSequence;
use crate::error::{Error, Result};

pub const MIN_FEATURE_DIM: usize = 12;
pub const JITTER_STD: f32 = 0.01;

/// Minimum L2 distance between two 40-frame renders (same seed) that differ
/// in exactly one described attribute. Verified exhaustively in the tests.
pub const GAIT_MARGIN: f32 = 2.0;
pub const DIRECTION_MARGIN: f32 = 2.0;
pub const SPEED_MARGIN: f32 = 2.0;
pub const POSTURE_MARGIN: f32 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMap {
    pub gait: Range<usize>,
    pub direction: Range<usize>,
    pub speed: Range<usize>,
    pub posture: Range<usize>,
    pub free: Range<usize>,
}

impl ChannelMap {
    pub fn for_dim(dim: usize) -> Result<Self> {
        if dim < MIN_FEATURE_DIM {
            return Err(Error::Argument(format!(
                "feature dimension {dim} below minimum {MIN_FEATURE_DIM}"
            )));
        }
        Ok(ChannelMap {
            gait: 0..4,
            direction: 4..6,
            speed: 6..8,
            posture: 8..10,
            free: 10..dim,
        })
    }

    /// Channels whose values depend on a described attribute.
    pub fn described(&self) -> Range<usize> {
        self.gait.start..self.posture.end
    }
}

#[derive(Debug, Clone)]
pub struct MotionRenderer {
    pub feature_dim: usize,
    pub frame_rate: f32,
    pub length_range: (usize, usize),
    channels: ChannelMap,
}

impl MotionRenderer {
    pub fn new(feature_dim: usize, frame_rate: f32, length_range: (usize, usize)) -> Result<Self> {
        if length_range.0 == 0 || length_range.0 > length_range.1 {
            return Err(Error::Argument(format!("bad length range {length_range:?}")));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::Argument("frame rate must be positive".into()));
        }
        Ok(MotionRenderer {
            feature_dim,
            frame_rate,
            length_range,
            channels: ChannelMap::for_dim(feature_dim)?,
        })
    }

    pub fn channels(&self) -> &ChannelMap {
        &self.channels
    }

    pub fn render(&self, attrs: &MotionAttributes, length: usize, seed: u64) -> Result<MotionSequence> {
        let (lo, hi) = self.length_range;
        if length < lo || length > hi {
            return Err(Error::Range(format!("length {length} outside [{lo}, {hi}]")));
        }
        attrs.validate()?;
        let d = self.feature_dim;
        let ch = &self.channels;
        let mut m = MotionSequence::zeros(length, d, self.frame_rate);
        let rate = attrs.speed.rate();
        // base stride frequency, rad/s
        let omega = TAU * 1.2 * rate;
        for t in 0..length {
            let time = t as f32 / self.frame_rate;
            let ph = omega * time;
            let row = m.frame_mut(t);

            let g = &mut row[ch.gait.clone()];
            match attrs.gait {
                Gait::Walk => {
                    g[0] = ph.sin();
                    g[1] = -ph.sin();
                    g[2] = 0.3 * (2.0 * ph).cos();
                    g[3] = 0.2;
                }
                Gait::Jump => {
                    let hop = 1.4 * ph.sin().abs() - 0.5;
                    g[0] = hop;
                    g[1] = hop;
                    g[2] = 0.6 * (2.0 * ph).cos();
                    g[3] = -0.4;
                }
                Gait::Wave => {
                    g[0] = 0.1 * ph.sin();
                    g[1] = 0.1 * ph.sin();
                    g[2] = 0.9 * (2.0 * ph).sin();
                    g[3] = 0.9;
                }
                Gait::Wipe => {
                    g[0] = 0.0;
                    g[1] = 0.0;
                    g[2] = 0.9 * ph.sin();
                    g[3] = 0.9 * ph.cos();
                }
            }

            // lateral / forward travel, centred so the group stays bounded
            let travel = rate * (time - 1.2);
            let sway = 0.5 * (0.5 * ph).sin();
            let dgrp = &mut row[ch.direction.clone()];
            match attrs.direction {
                Direction::Left | Direction::Right => {
                    let sign = if attrs.direction == Direction::Right { 1.0 } else { -1.0 };
                    dgrp[0] = sign * travel;
                    dgrp[1] = sign * sway;
                }
                Direction::Forward => {
                    dgrp[0] = 0.0;
                    dgrp[1] = travel + 0.5;
                }
            }

            let s = &mut row[ch.speed.clone()];
            let level = match attrs.speed {
                Speed::Slow => -1.0,
                Speed::Normal => 0.0,
                Speed::Fast => 1.0,
            };
            s[0] = level;
            s[1] = 0.3 * rate * (ph + PI / 4.0).sin();

            let p = &mut row[ch.posture.clone()];
            let (tilt, height) = match attrs.posture {
                Posture::Standing => (-0.8, 1.0),
                Posture::Leaning => (0.4, 0.4),
                Posture::Bending => (1.0, -0.8),
            };
            let breath = 0.1 * (TAU * 0.4 * time).sin();
            p[0] = tilt + breath;
            p[1] = height - breath;

            for (k, c) in ch.free.clone().enumerate() {
                let f = TAU * (0.5 + 0.25 * k as f32) * rate;
                row[c] = attrs.free_amplitude * (f * time + attrs.free_phase + 0.9 * k as f32).sin();
            }
        }

        let mut rng = crate::rng::rng_from(seed);
        let jitter = Normal::new(0.0f32, JITTER_STD).expect("valid std");
        let frames = m.into_vec();
        let frames = frames.into_iter().map(|v| v + jitter.sample(&mut rng)).collect();
        MotionSequence::new(frames, d, self.frame_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn renderer() -> MotionRenderer {
        MotionRenderer::new(16, 20.0, (32, 64)).unwrap()
    }

    fn base() -> MotionAttributes {
        MotionAttributes {
            gait: Gait::Walk,
            direction: Direction::Left,
            speed: Speed::Normal,
            posture: Posture::Standing,
            free_phase: 0.5,
            free_amplitude: 1.0,
        }
    }

    fn group(m: &MotionSequence, r: Range<usize>) -> Vec<f32> {
        (0..m.len()).flat_map(|t| m.frame(t)[r.clone()].to_vec()).collect()
    }

    #[test]
    fn deterministic() {
        let r = renderer();
        let a = r.render(&base(), 40, 1).unwrap();
        let b = r.render(&base(), 40, 1).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(a.is_finite());
    }

    #[test]
    fn length_out_of_range() {
        assert!(matches!(renderer().render(&base(), 20, 1), Err(Error::Range(_))));
        assert!(matches!(renderer().render(&base(), 65, 1), Err(Error::Range(_))));
    }

    #[test]
    fn direction_flip_negates_group() {
        // without jitter the flip is exact; compare the noiseless parts via two seeds' average difference
        let r = renderer();
        let left = r.render(&base(), 40, 1).unwrap();
        let mut attrs = base();
        attrs.direction = Direction::Right;
        let right = r.render(&attrs, 40, 1).unwrap();
        let gl = group(&left, r.channels().direction.clone());
        let gr = group(&right, r.channels().direction.clone());
        // jitter is shared (same seed), so left + right = 2 * jitter
        for (a, b) in gl.iter().zip(&gr) {
            assert!((a + b).abs() <= 8.0 * JITTER_STD, "{a} {b}");
        }
        let max = gl.iter().fold(0f32, |m, v| m.max(v.abs()));
        assert!(max > 0.5);
        // other groups untouched
        let rest = r.channels().gait.start..r.channels().direction.start;
        assert_eq!(group(&left, rest.clone()), group(&right, rest));
    }

    #[test]
    fn free_change_keeps_described_groups() {
        let r = renderer();
        let a = r.render(&base(), 40, 7).unwrap();
        let mut attrs = base();
        attrs.free_phase = 3.0;
        attrs.free_amplitude = 1.4;
        let b = r.render(&attrs, 40, 7).unwrap();
        let described = r.channels().described();
        assert_eq!(group(&a, described.clone()), group(&b, described));
        assert_ne!(group(&a, r.channels().free.clone()), group(&b, r.channels().free.clone()));
    }

    #[test]
    fn attribute_margins_hold_exhaustively() {
        let r = renderer();
        let all = MotionAttributes::enumerate(0.5, 1.0);
        let mut min = [f32::INFINITY; 4];
        for a in &all {
            let ma = r.render(a, 40, 3).unwrap();
            for b in &all {
                let diffs = [
                    a.gait != b.gait,
                    a.direction != b.direction,
                    a.speed != b.speed,
                    a.posture != b.posture,
                ];
                if diffs.iter().filter(|&&d| d).count() != 1 {
                    continue;
                }
                let which = diffs.iter().position(|&d| d).unwrap();
                let dist = ma.l2_distance(&r.render(b, 40, 3).unwrap());
                min[which] = min[which].min(dist);
            }
        }
        let margins = [GAIT_MARGIN, DIRECTION_MARGIN, SPEED_MARGIN, POSTURE_MARGIN];
        for (m, margin) in min.iter().zip(margins) {
            assert!(*m > margin, "observed {min:?}");
        }
    }
}

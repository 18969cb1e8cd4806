use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Walk,
    Jump,
    Wave,
    Wipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    Slow,
    Normal,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    Standing,
    Leaning,
    Bending,
}

impl Gait {
    pub const ALL: [Gait; 4] = [Gait::Walk, Gait::Jump, Gait::Wave, Gait::Wipe];
}
impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Left, Direction::Right, Direction::Forward];
}
impl Speed {
    pub const ALL: [Speed; 3] = [Speed::Slow, Speed::Normal, Speed::Fast];

    /// Oscillation-rate multiplier.
    pub fn rate(self) -> f32 {
        match self {
            Speed::Slow => 0.6,
            Speed::Normal => 1.0,
            Speed::Fast => 1.6,
        }
    }
}
impl Posture {
    pub const ALL: [Posture; 3] = [Posture::Standing, Posture::Leaning, Posture::Bending];
}

pub const FREE_AMPLITUDE_RANGE: (f32, f32) = (0.5, 1.5);

/// Ground-truth attributes behind one rendered motion. The four enum fields
/// can be mentioned by a caption; the phase and amplitude never are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionAttributes {
    pub gait: Gait,
    pub direction: Direction,
    pub speed: Speed,
    pub posture: Posture,
    pub free_phase: f32,
    pub free_amplitude: f32,
}

impl MotionAttributes {
    pub fn validate(&self) -> Result<()> {
        let tau = std::f32::consts::TAU;
        if !(0.0..tau).contains(&self.free_phase) {
            return Err(Error::Range(format!("free_phase {} outside [0, 2pi)", self.free_phase)));
        }
        let (lo, hi) = FREE_AMPLITUDE_RANGE;
        if !(lo..=hi).contains(&self.free_amplitude) {
            return Err(Error::Range(format!(
                "free_amplitude {} outside [{lo}, {hi}]",
                self.free_amplitude
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        MotionAttributes {
            gait: Gait::ALL[rng.random_range(0..4)],
            direction: Direction::ALL[rng.random_range(0..3)],
            speed: Speed::ALL[rng.random_range(0..3)],
            posture: Posture::ALL[rng.random_range(0..3)],
            free_phase: rng.random_range(0.0..std::f32::consts::TAU),
            free_amplitude: rng.random_range(FREE_AMPLITUDE_RANGE.0..=FREE_AMPLITUDE_RANGE.1),
        }
    }

    /// Every combination of the described attributes, with the given free values.
    pub fn enumerate(free_phase: f32, free_amplitude: f32) -> Vec<Self> {
        let mut out = Vec::with_capacity(108);
        for gait in Gait::ALL {
            for direction in Direction::ALL {
                for speed in Speed::ALL {
                    for posture in Posture::ALL {
                        out.push(MotionAttributes {
                            gait,
                            direction,
                            speed,
                            posture,
                            free_phase,
                            free_amplitude,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Which of the four described attributes a caption mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DescribedMask(u8);

impl DescribedMask {
    pub const GAIT: DescribedMask = DescribedMask(1);
    pub const DIRECTION: DescribedMask = DescribedMask(2);
    pub const SPEED: DescribedMask = DescribedMask(4);
    pub const POSTURE: DescribedMask = DescribedMask(8);
    pub const NONE: DescribedMask = DescribedMask(0);
    pub const ALL: DescribedMask = DescribedMask(15);

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits > 15 {
            return Err(Error::Argument(format!("described mask bits {bits:#x} exceed 0xf")));
        }
        Ok(DescribedMask(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, other: DescribedMask) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn with(self, other: DescribedMask) -> Self {
        DescribedMask(self.0 | other.0)
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

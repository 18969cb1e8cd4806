use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 16;
pub const DEFAULT_FRAME_RATE: f32 = 20.0;

/// A `len x dim` matrix of per-frame features, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    frames: Vec<f32>,
    dim: usize,
    pub frame_rate: f32,
}

impl MotionSequence {
    pub fn new(frames: Vec<f32>, dim: usize, frame_rate: f32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("motion feature dimension must be positive".into()));
        }
        if frames.len() % dim != 0 {
            return Err(Error::Argument(format!(
                "{} values do not form rows of width {dim}",
                frames.len()
            )));
        }
        Ok(MotionSequence {
            frames,
            dim,
            frame_rate,
        })
    }

    pub fn zeros(len: usize, dim: usize, frame_rate: f32) -> Self {
        MotionSequence {
            frames: vec![0.0; len * dim],
            dim,
            frame_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.frames
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.frames
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        self.frames.iter().skip(c).step_by(self.dim).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }

    /// Drop trailing frames so the length is a multiple of `multiple`.
    pub fn cropped_to_multiple(&self, multiple: usize) -> Self {
        let keep = self.len() / multiple * multiple;
        MotionSequence {
            frames: self.frames[..keep * self.dim].to_vec(),
            dim: self.dim,
            frame_rate: self.frame_rate,
        }
    }

    pub fn l2_distance(&self, other: &MotionSequence) -> f32 {
        self.frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt()
    }
}

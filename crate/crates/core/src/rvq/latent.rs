use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `len x dim` latent vectors, one per `downsample` motion frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    pub latents: Vec<f32>,
    pub dim: usize,
    pub downsample: usize,
}

impl LatentSequence {
    pub fn new(latents: Vec<f32>, dim: usize, downsample: usize) -> Result<Self> {
        if dim == 0 || latents.len() % dim != 0 {
            return Err(Error::Argument("latent buffer does not match width".into()));
        }
        Ok(LatentSequence {
            latents,
            dim,
            downsample,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.latents[i * self.dim..(i + 1) * self.dim]
    }
}

/// `len x layers` code indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub indices: Vec<Vec<usize>>,
}

impl CodeSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.indices.first().map_or(0, |r| r.len())
    }

    pub fn layer(&self, v: usize) -> Vec<usize> {
        self.indices.iter().map(|r| r[v]).collect()
    }

    pub fn from_layers(layers: &[Vec<usize>]) -> Self {
        let len = layers.first().map_or(0, |l| l.len());
        CodeSequence {
            indices: (0..len).map(|t| layers.iter().map(|l| l[t]).collect()).collect(),
        }
    }
}

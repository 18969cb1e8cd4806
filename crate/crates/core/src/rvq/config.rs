use serde::{Deserialize, Serialize};

use super::codebook::ResetPolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RvqConfig {
    /// Codes per codebook (K).
    pub codebook_size: usize,
    /// Latent / code width (d_c).
    pub code_dim: usize,
    /// Temporal downsampling rate (l); a power of two.
    pub downsample: usize,
    /// Total quantizer layers: one base layer plus the residual layers.
    pub num_layers: usize,
    pub hidden_width: usize,
    pub res_blocks: usize,
    /// Commitment weight (beta).
    pub commitment: f32,
    pub ema_decay: f32,
    pub reset: ResetPolicy,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    /// Training crops are this many frames (rounded down to a multiple of `downsample`).
    pub crop_frames: usize,
    pub seed: u64,
}

impl Default for RvqConfig {
    fn default() -> Self {
        RvqConfig {
            codebook_size: 64,
            code_dim: 32,
            downsample: 4,
            num_layers: 3,
            hidden_width: 64,
            res_blocks: 1,
            commitment: 0.02,
            ema_decay: 0.99,
            reset: ResetPolicy::default(),
            learning_rate: 4e-3,
            batch_size: 64,
            epochs: 200,
            warmup_steps: 100,
            crop_frames: 32,
            seed: 0,
        }
    }
}

impl RvqConfig {
    /// Sizes used by the full-scale model (K=512, d_c=512, 6 layers).
    pub fn full_scale() -> Self {
        RvqConfig {
            codebook_size: 512,
            code_dim: 512,
            num_layers: 6,
            commitment: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("codebook_size", self.codebook_size),
            ("code_dim", self.code_dim),
            ("downsample", self.downsample),
            ("num_layers", self.num_layers),
            ("hidden_width", self.hidden_width),
            ("batch_size", self.batch_size),
            ("crop_frames", self.crop_frames),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("rvq.{name} must be positive")));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("rvq.codebook_size must be at least 2".into()));
        }
        if !self.downsample.is_power_of_two() {
            return Err(Error::Config(format!("rvq.downsample {} is not a power of two", self.downsample)));
        }
        if self.crop_frames < self.downsample {
            return Err(Error::Config("rvq.crop_frames shorter than one latent step".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || self.commitment < 0.0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("rvq ema_decay / commitment / learning_rate out of range".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }
}

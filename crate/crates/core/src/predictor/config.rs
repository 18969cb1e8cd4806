use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Transformer blocks in the masked fusion stack (N).
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    /// Conditioning-signal width (D_g); text and noise signals share it.
    pub signal_dim: usize,
    /// Per-position latent width (D_z).
    pub latent_dim: usize,
    /// Residual MLP blocks between the latent and the code scores.
    pub head_blocks: usize,
    /// Transformer blocks in the residual-layer head.
    pub residual_layers: usize,
    /// Probability that a training sample is conditioned on noise instead of its caption.
    pub p_noise: f64,
    pub kl_weight: f64,
    pub variational: bool,
    /// Time-scale range for noise-conditioned training motions.
    pub length_scale_range: (f32, f32),
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            layers: 4,
            heads: 4,
            width: 64,
            signal_dim: 64,
            latent_dim: 32,
            head_blocks: 2,
            residual_layers: 2,
            p_noise: 0.1,
            kl_weight: 1e-5,
            variational: true,
            length_scale_range: crate::syndata::DEFAULT_SCALE_RANGE,
            learning_rate: 5e-4,
            batch_size: 64,
            epochs: 60,
            warmup_steps: 100,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::Config(format!("predictor.p_noise {} outside [0, 1]", self.p_noise)));
        }
        if self.kl_weight < 0.0 {
            return Err(Error::Config("predictor.kl_weight must be non-negative".into()));
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config("predictor.width must be a positive multiple of heads".into()));
        }
        if self.layers == 0 || self.signal_dim == 0 || self.latent_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("predictor sizes must be positive".into()));
        }
        let (lo, hi) = self.length_scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("predictor.length_scale_range must satisfy 0 < lo <= hi".into()));
        }
        Ok(())
    }
}

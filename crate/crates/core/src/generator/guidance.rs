//! Text-versus-noise guidance on code distributions.
//!
//! Rows are combined in log space, `(1 + w) log p_text - w log p_noise`, and
//! renormalised so the result stays a distribution for every `w >= 0`.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::log_softmax;
use crate::predictor::tokens::log_sum_exp;
use crate::predictor::CodeDistribution;

pub fn guided_fuse(text: &CodeDistribution, noise: &CodeDistribution, w: f64) -> Result<CodeDistribution> {
    if text.codebook_size != noise.codebook_size || text.log_probs.len() != noise.log_probs.len() {
        return Err(Error::Argument(format!(
            "guidance inputs differ in shape: {}x{} vs {}x{}",
            text.len(),
            text.codebook_size,
            noise.len(),
            noise.codebook_size
        )));
    }
    if !(w >= 0.0) {
        return Err(Error::Argument(format!("guidance weight {w} must be non-negative")));
    }
    if w == 0.0 {
        return Ok(text.clone());
    }
    let k = text.codebook_size;
    let mut out = Vec::with_capacity(text.log_probs.len());
    for (t, n) in text.log_probs.chunks(k).zip(noise.log_probs.chunks(k)) {
        let raw: Vec<f32> = t
            .iter()
            .zip(n)
            .map(|(&a, &b)| ((1.0 + w) * a as f64 - w * b as f64) as f32)
            .collect();
        let z = log_sum_exp(&raw);
        out.extend(raw.iter().map(|r| r - z));
    }
    Ok(CodeDistribution {
        log_probs: out,
        codebook_size: k,
    })
}

/// Batched form over `(B, L, K)` log-probabilities.
pub fn guided_fuse_tensor(text: &Tensor, noise: &Tensor, w: f64) -> Result<Tensor> {
    if text.dims() != noise.dims() {
        return Err(Error::Argument(format!("guidance shapes {:?} vs {:?}", text.dims(), noise.dims())));
    }
    if w == 0.0 {
        return Ok(text.clone());
    }
    let raw = ((text * (1.0 + w))? - (noise * w)?)?;
    log_softmax(&raw)
}

//! Codec objective: mean L1 reconstruction plus beta-weighted commitment
//! `sum_v mean((R^v - sg[R^v_hat])^2)` over quantizer layers.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Scalar evaluation on flat buffers.
pub fn rvq_loss(
    motion: &[f32],
    recon: &[f32],
    residuals: &[Vec<f32>],
    quantized: &[Vec<f32>],
    beta: f64,
) -> Result<f64> {
    if motion.len() != recon.len() || motion.is_empty() {
        return Err(Error::Argument(format!(
            "motion has {} values, reconstruction {}",
            motion.len(),
            recon.len()
        )));
    }
    if residuals.len() != quantized.len() {
        return Err(Error::Argument("residual and quantized layer counts differ".into()));
    }
    let l1 = motion.iter().zip(recon).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / motion.len() as f64;
    let mut commit = 0.0;
    for (r, q) in residuals.iter().zip(quantized) {
        if r.len() != q.len() || r.is_empty() {
            return Err(Error::Argument("residual layer shape mismatch".into()));
        }
        commit += r.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / r.len() as f64;
    }
    Ok(l1 + beta * commit)
}

/// Quantized values in the forward pass, identity gradient to `z`.
pub fn straight_through(z: &Tensor, quantized: &Tensor) -> Result<Tensor> {
    Ok((z + (quantized - z)?.detach())?)
}

/// Differentiable version. `targets` are detached here.
pub fn rvq_loss_tensor(
    motion: &Tensor,
    recon: &Tensor,
    residuals: &[Tensor],
    targets: &[Tensor],
    beta: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    if motion.dims() != recon.dims() {
        return Err(Error::Argument(format!("shape {:?} vs {:?}", motion.dims(), recon.dims())));
    }
    let l1 = (motion - recon)?.abs()?.mean_all()?;
    let mut commit = l1.zeros_like()?;
    for (r, q) in residuals.iter().zip(targets) {
        if r.dims() != q.dims() {
            return Err(Error::Argument("residual layer shape mismatch".into()));
        }
        commit = (commit + (r - q.detach())?.sqr()?.mean_all()?)?;
    }
    let total = (&l1 + (&commit * beta)?)?;
    Ok((total, l1, commit))
}

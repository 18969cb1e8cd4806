use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::error::{Error, Result};

/// Adam with global gradient-norm clipping.
pub struct Adam {
    inner: AdamW,
    vars: Vec<Var>,
    max_grad_norm: f64,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, max_grad_norm: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        };
        Ok(Adam {
            inner: AdamW::new(vars.clone(), params)?,
            vars,
            max_grad_norm,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.inner.set_learning_rate(lr);
    }

    /// Backpropagate `loss`, clip, and update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, loss: &Tensor, step: usize) -> Result<f64> {
        let mut grads = loss.backward()?;
        let norm = grad_norm(&grads, &self.vars)?;
        if !norm.is_finite() {
            return Err(Error::Training {
                step,
                reason: "non-finite gradient".into(),
            });
        }
        if norm > self.max_grad_norm {
            let scale = self.max_grad_norm / norm;
            for v in &self.vars {
                if let Some(g) = grads.remove(v.as_tensor()) {
                    grads.insert(v.as_tensor(), (g * scale)?);
                }
            }
        }
        self.inner.step(&grads)?;
        Ok(norm)
    }
}

fn grad_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
        }
    }
    Ok(total.sqrt())
}

/// Linear warm-up then cosine decay to 10% of the peak.
pub fn lr_at(step: usize, total: usize, peak: f64, warmup: usize) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total.saturating_sub(warmup)).max(1) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
    peak * (0.1 + 0.9 * cos)
}

pub fn check_finite(loss: f32, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            step,
            reason: format!("loss became {loss}"),
        })
    }
}

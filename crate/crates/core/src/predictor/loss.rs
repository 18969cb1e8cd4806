//! Masked code likelihood and the Gaussian KL term.

use candle_core::{Tensor, D};

use super::tokens::{CodeDistribution, LatentGaussian};
use crate::error::{Error, Result};

/// `(1/D) sum_i 1/2 (mu_i^2 + sigma_i^2 - 1 - ln sigma_i^2)`.
pub fn kl_loss(g: &LatentGaussian) -> f64 {
    if g.mu.is_empty() {
        return 0.0;
    }
    let total: f64 = g
        .mu
        .iter()
        .zip(&g.log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum();
    total / g.mu.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedNll {
    pub value: f64,
    /// Set when no position was masked; `value` is then 0.
    pub nothing_masked: bool,
}

/// Mean negative log-likelihood of `targets` over masked positions only.
/// Unmasked positions contribute nothing.
pub fn masked_nll(dist: &CodeDistribution, targets: &[usize], masked: &[bool]) -> Result<MaskedNll> {
    if targets.len() != dist.len() || masked.len() != dist.len() {
        return Err(Error::Argument(format!(
            "distribution has {} rows, targets {}, mask {}",
            dist.len(),
            targets.len(),
            masked.len()
        )));
    }
    let mut total = 0f64;
    let mut count = 0usize;
    for (t, (&target, &m)) in targets.iter().zip(masked).enumerate() {
        if !m {
            continue;
        }
        if target >= dist.codebook_size {
            return Err(Error::Argument(format!("target code {target} >= {}", dist.codebook_size)));
        }
        total -= dist.row(t)[target] as f64;
        count += 1;
    }
    if count == 0 {
        return Ok(MaskedNll {
            value: 0.0,
            nothing_masked: true,
        });
    }
    Ok(MaskedNll {
        value: total / count as f64,
        nothing_masked: false,
    })
}

/// Weighted NLL: `-sum(w * log p[target]) / sum(w)`; `log_probs` is
/// `(B, L, K)`, `targets` `(B, L)` u32, `weights` `(B, L)`.
pub fn weighted_nll_tensor(log_probs: &Tensor, targets: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let picked = log_probs.gather(&targets.unsqueeze(D::Minus1)?, D::Minus1)?.squeeze(D::Minus1)?;
    let denom = weights.sum_all()?.to_scalar::<f32>()?.max(1.0) as f64;
    Ok(((picked * weights)?.sum_all()?.neg()? / denom)?)
}

/// KL to the standard normal averaged over the `weights`-selected positions
/// and the latent width. `mu`, `log_var` are `(B, L, D)`, `weights` `(B, L)`.
pub fn kl_loss_tensor(mu: &Tensor, log_var: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let per = ((mu.sqr()? + log_var.exp()?)? - 1.0)?.sub(log_var)?;
    let per_pos = (per.mean(D::Minus1)? * 0.5)?;
    let denom = weights.sum_all()?.to_scalar::<f32>()?.max(1.0) as f64;
    Ok(((per_pos * weights)?.sum_all()? / denom)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(len: usize, k: usize) -> CodeDistribution {
        CodeDistribution {
            log_probs: vec![-(k as f32).ln(); len * k],
            codebook_size: k,
        }
    }

    #[test]
    fn kl_closed_forms() {
        let g = |mu: f32, lv: f32| LatentGaussian {
            mu: vec![mu],
            log_var: vec![lv],
            dim: 1,
        };
        assert_eq!(kl_loss(&g(0.0, 0.0)), 0.0);
        assert!((kl_loss(&g(1.0, 0.0)) - 0.5).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((kl_loss(&g(0.0, 1.0)) - (e - 2.0) / 2.0).abs() < 1e-7);
        assert!((kl_loss(&g(0.0, 1.0)) - 0.3591).abs() < 1e-4);
    }

    #[test]
    fn nll_cases() {
        let d = uniform(4, 64);
        assert_eq!(masked_nll(&d, &[1, 2, 3, 4], &[false; 4]).unwrap(), MaskedNll { value: 0.0, nothing_masked: true });
        let v = masked_nll(&d, &[1, 2, 3, 4], &[true, false, true, true]).unwrap().value;
        assert!((v - 64f64.ln()).abs() < 1e-6);
        let half = CodeDistribution {
            log_probs: vec![0.5f32.ln(), 0.25f32.ln(), 0.25f32.ln()],
            codebook_size: 3,
        };
        let v = masked_nll(&half, &[0], &[true]).unwrap().value;
        assert!((v - 0.5f64.ln().abs()).abs() < 1e-6);
        assert!((v - 0.6931).abs() < 1e-4);
        assert!(masked_nll(&half, &[0, 1], &[true]).is_err());
    }

    #[test]
    fn unmasked_positions_are_inert() {
        let mut d = uniform(3, 4);
        let before = masked_nll(&d, &[0, 1, 2], &[true, false, true]).unwrap();
        d.log_probs[4..8].copy_from_slice(&[-0.1, -5.0, -7.0, -9.0]);
        let after = masked_nll(&d, &[0, 1, 2], &[true, false, true]).unwrap();
        assert_eq!(before, after);
    }

    /// Simpson's rule for KL(N(mu, s^2) || N(0, 1)).
    fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let lp = -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let lq = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
            lp.exp() * (lp - lq)
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn kl_matches_quadrature() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from(21);
        for _ in 0..50 {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let sigma: f64 = rng.random_range(0.2..3.0);
            let g = LatentGaussian {
                mu: vec![mu as f32],
                log_var: vec![(sigma * sigma).ln() as f32],
                dim: 1,
            };
            let oracle = kl_quadrature(mu, sigma);
            // f32 storage of mu and log-variance bounds the agreement
            let exact = 0.5 * (mu * mu + sigma * sigma - 1.0 - (sigma * sigma).ln());
            assert!((exact - oracle).abs() < 1e-5, "{mu} {sigma}: {exact} vs {oracle}");
            assert!((kl_loss(&g) - oracle).abs() < 1e-5 * oracle.max(1.0), "{mu} {sigma}");
        }
    }

    #[test]
    fn tensor_losses_match_scalar_versions() {
        use candle_core::Device;
        let dev = Device::Cpu;
        let lp: Vec<f32> = (0..2 * 3 * 4).map(|i| (i as f32 * 0.7).sin()).collect();
        let logits = Tensor::from_vec(lp, (2, 3, 4), &dev).unwrap();
        let log_probs = crate::nn::layers::log_softmax(&logits).unwrap();
        let targets = Tensor::new(&[[0u32, 3, 1], [2, 2, 0]], &dev).unwrap();
        let mask = [[1f32, 0.0, 1.0], [0.0, 1.0, 1.0]];
        let w = Tensor::new(&mask, &dev).unwrap();
        let got = weighted_nll_tensor(&log_probs, &targets, &w).unwrap().to_scalar::<f32>().unwrap();
        let flat = crate::nn::to_vec(&log_probs).unwrap();
        let t = [[0usize, 3, 1], [2, 2, 0]];
        let mut want = 0.0;
        for b in 0..2 {
            let d = CodeDistribution {
                log_probs: flat[b * 12..(b + 1) * 12].to_vec(),
                codebook_size: 4,
            };
            let m: Vec<bool> = mask[b].iter().map(|&x| x > 0.0).collect();
            want += masked_nll(&d, &t[b], &m).unwrap().value * 2.0;
        }
        assert!((got as f64 - want / 4.0).abs() < 1e-5);

        let mu = Tensor::new(&[[[1.0f32, 0.0]], [[0.5, -0.5]]], &dev).unwrap();
        let lv = Tensor::new(&[[[0.0f32, 1.0]], [[-1.0, 0.3]]], &dev).unwrap();
        let w = Tensor::new(&[[1f32], [1.0]], &dev).unwrap();
        let got = kl_loss_tensor(&mu, &lv, &w).unwrap().to_scalar::<f32>().unwrap() as f64;
        let g = |m: Vec<f32>, l: Vec<f32>| kl_loss(&LatentGaussian { mu: m, log_var: l, dim: 2 });
        let want = (g(vec![1.0, 0.0], vec![0.0, 1.0]) + g(vec![0.5, -0.5], vec![-1.0, 0.3])) / 2.0;
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        use candle_core::{Device, Var};
        let dev = Device::Cpu;
        let x0: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f64 * 1.3).cos()).collect();
        let targets = Tensor::new(&[[4u32, 0, 2], [1, 1, 3]], &dev).unwrap();
        let w = Tensor::new(&[[1f64, 0.0, 1.0], [1.0, 1.0, 0.0]], &dev).unwrap();
        let f = |x: &Tensor| -> Tensor {
            let lp = crate::nn::layers::log_softmax(x).unwrap();
            let picked = lp.gather(&targets.unsqueeze(2).unwrap(), 2).unwrap().squeeze(2).unwrap();
            (picked * &w).unwrap().sum_all().unwrap().neg().unwrap()
        };
        let xv = Var::from_tensor(&Tensor::from_vec(x0.clone(), (2, 3, 5), &dev).unwrap()).unwrap();
        let g = f(xv.as_tensor()).backward().unwrap();
        let grad = g.get(xv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in 0..x0.len() {
            let bump = |h: f64| {
                let mut v = x0.clone();
                v[i] += h;
                f(&Tensor::from_vec(v, (2, 3, 5), &dev).unwrap()).to_scalar::<f64>().unwrap()
            };
            let fd = (bump(1e-6) - bump(-1e-6)) / 2e-6;
            assert!((grad[i] - fd).abs() < 1e-6, "{i}: {} vs {fd}", grad[i]);
        }
    }
}

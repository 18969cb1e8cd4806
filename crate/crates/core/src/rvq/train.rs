use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::codec::{CodecConfig, MotionCodec};
use super::config::RvqConfig;
use super::loss::{rvq_loss_tensor, straight_through};
use super::quantize::quantize_nearest;
use crate::error::{Error, Result};
use crate::nn::optim::{check_finite, lr_at, Adam};
use crate::nn::to_vec;
use crate::rng::{labeled_seed, rng_from};
use crate::syndata::{Dataset, MotionSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f32,
    pub recon: f32,
    pub commit: f32,
    pub resets: usize,
}

pub struct RvqCheckpoint {
    pub codec: MotionCodec,
    pub curve: Vec<CurvePoint>,
}

pub const CURVE_FILE: &str = "curve.json";

impl RvqCheckpoint {
    pub fn save(&self, dir: &Path, overwrite: bool) -> Result<String> {
        let fp = self.codec.save(dir, overwrite)?;
        let p = dir.join(CURVE_FILE);
        std::fs::write(&p, serde_json::to_vec_pretty(&self.curve)?).map_err(|e| Error::io(p, e))?;
        Ok(fp)
    }
}

fn crop_len(dataset: &Dataset, config: &RvqConfig) -> Result<usize> {
    let l = config.downsample;
    let shortest = dataset.train().map(|s| s.motion.len()).min().unwrap_or(0);
    let crop = config.crop_frames.min(shortest) / l * l;
    if crop < l {
        return Err(Error::Argument(format!(
            "shortest training motion ({shortest} frames) is below the downsample rate {l}"
        )));
    }
    Ok(crop)
}

/// Train the codec on the training split.
pub fn train_rvq(dataset: &Dataset, config: &RvqConfig) -> Result<RvqCheckpoint> {
    config.validate()?;
    let train: Vec<usize> = dataset.train_indices.clone();
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let crop = crop_len(dataset, config)?;
    let (mean, std) = Dataset::channel_stats(dataset.train(), dataset.feature_dim);
    let mut codec = MotionCodec::new(
        CodecConfig {
            rvq: config.clone(),
            feature_dim: dataset.feature_dim,
            frame_rate: dataset.frame_rate,
        },
        mean,
        std,
    )?;
    let mut rng = rng_from(labeled_seed(config.seed, "codec-train"));
    let mut opt = Adam::new(codec.params().vars(), config.learning_rate, 1.0)?;

    let batch = config.batch_size.min(train.len());
    let steps_per_epoch = (train.len() / batch).max(1);
    let total = steps_per_epoch * config.epochs;
    let dc = config.code_dim;
    let mut curve = Vec::new();
    let mut step = 0;
    let mut initialised = false;

    for epoch in 0..config.epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_recon, mut sum_commit, mut resets) = (0f32, 0f32, 0f32, 0usize);
        for b in 0..steps_per_epoch {
            opt.set_lr(lr_at(step, total, config.learning_rate, config.warmup_steps));
            let crops: Vec<MotionSequence> = order[b * batch..(b + 1) * batch]
                .iter()
                .map(|&i| random_crop(&dataset.samples[i].motion, crop, &mut rng))
                .collect::<Result<_>>()?;
            let refs: Vec<&MotionSequence> = crops.iter().collect();
            let x = codec.motions_to_tensor(&refs)?;
            let z = codec.encode_tensor(&x)?;
            let (bsz, tl, _) = z.dims3()?;
            let zv = to_vec(&z)?;

            if !initialised {
                let mut residual = zv.clone();
                for layer in codec.codebook.layers.iter_mut() {
                    layer.init_kmeans(&residual, &mut rng, 5)?;
                    for row in residual.chunks_mut(dc) {
                        let (_, c) = quantize_nearest(row, layer.table());
                        let c = c.to_vec();
                        row.iter_mut().zip(&c).for_each(|(r, c)| *r -= c);
                    }
                }
                initialised = true;
            }

            // residual recursion over the batch, layer by layer
            let n = bsz * tl;
            let mut residual = zv.clone();
            let mut cumulative: Vec<Vec<f32>> = Vec::with_capacity(codec.codebook.num_layers());
            let mut running = vec![0f32; n * dc];
            for layer in codec.codebook.layers.iter_mut() {
                let mut assign = Vec::with_capacity(n);
                let mut picked = vec![0f32; n * dc];
                for (i, row) in residual.chunks(dc).enumerate() {
                    let (k, c) = quantize_nearest(row, layer.table());
                    assign.push(k);
                    picked[i * dc..(i + 1) * dc].copy_from_slice(c);
                }
                let inputs = residual.clone();
                for ((r, p), s) in residual.iter_mut().zip(&picked).zip(running.iter_mut()) {
                    *r -= p;
                    *s += p;
                }
                layer.ema_update(&inputs, &assign, config.ema_decay)?;
                resets += layer.codebook_reset(&inputs, config.reset, &mut rng).len();
                cumulative.push(running.clone());
            }

            let shape = (bsz, tl, dc);
            let q = Tensor::from_vec(running, shape, &Device::Cpu)?;
            let targets: Vec<Tensor> = cumulative
                .into_iter()
                .map(|c| Tensor::from_vec(c, shape, &Device::Cpu))
                .collect::<candle_core::Result<_>>()?;
            let zq = straight_through(&z, &q)?;
            let recon = codec.decode_tensor(&zq)?;
            // R^v - sg[R^v_hat] = z - sg[sum_{u<=v} r_hat^u]
            let residuals = vec![z.clone(); targets.len()];
            let (loss, l1, commit) = rvq_loss_tensor(&x, &recon, &residuals, &targets, config.commitment as f64)?;
            let lv = loss.to_scalar::<f32>()?;
            check_finite(lv, step)?;
            opt.step(&loss, step)?;
            sum_loss += lv;
            sum_recon += l1.to_scalar::<f32>()?;
            sum_commit += commit.to_scalar::<f32>()?;
            step += 1;
        }
        let k = steps_per_epoch as f32;
        log::debug!("codec epoch {epoch}: loss {:.4} recon {:.4}", sum_loss / k, sum_recon / k);
        curve.push(CurvePoint {
            epoch,
            step,
            loss: sum_loss / k,
            recon: sum_recon / k,
            commit: sum_commit / k,
            resets,
        });
    }
    Ok(RvqCheckpoint { codec, curve })
}

fn random_crop(m: &MotionSequence, len: usize, rng: &mut crate::rng::Rng) -> Result<MotionSequence> {
    let start = rng.random_range(0..=m.len() - len);
    let d = m.dim();
    MotionSequence::new(m.as_slice()[start * d..(start + len) * d].to_vec(), d, m.frame_rate)
}

/// Held-out reconstruction error per channel, next to the corpus spread.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub channel_mae: Vec<f32>,
    pub channel_std: Vec<f32>,
    /// Mean over channels of `mae / std`.
    pub relative_l1: f32,
}

pub fn reconstruction_report(codec: &MotionCodec, dataset: &Dataset) -> Result<ReconstructionReport> {
    let d = dataset.feature_dim;
    let (_, channel_std) = Dataset::channel_stats(dataset.samples.iter(), d);
    let motions: Vec<MotionSequence> = dataset.test().map(|s| s.motion.cropped_to_multiple(codec.downsample())).collect();
    let refs: Vec<&MotionSequence> = motions.iter().collect();
    let latents = codec.encode_many(&refs)?;
    let deq: Vec<_> = latents
        .iter()
        .map(|z| codec.dequantize(&codec.quantize(z).0))
        .collect::<Result<_>>()?;
    let recon = codec.decode_many(&deq.iter().collect::<Vec<_>>())?;
    let mut err = vec![0f64; d];
    let mut n = 0usize;
    for (m, r) in motions.iter().zip(&recon) {
        for (a, b) in m.as_slice().chunks(d).zip(r.as_slice().chunks(d)) {
            for c in 0..d {
                err[c] += (a[c] - b[c]).abs() as f64;
            }
            n += 1;
        }
    }
    let channel_mae: Vec<f32> = err.iter().map(|e| (e / n.max(1) as f64) as f32).collect();
    let relative_l1 = channel_mae.iter().zip(&channel_std).map(|(e, s)| e / s.max(1e-6)).sum::<f32>() / d as f32;
    Ok(ReconstructionReport {
        channel_mae,
        channel_std,
        relative_l1,
    })
}

/// Fraction of layer-0 codes used at least once when tokenizing `motions`.
pub fn code_usage(codec: &MotionCodec, motions: &[&MotionSequence]) -> Result<f32> {
    let mut used = vec![false; codec.codebook.size()];
    for codes in codec.tokenize(motions)? {
        for row in &codes.indices {
            used[row[0]] = true;
        }
    }
    Ok(used.iter().filter(|&&u| u).count() as f32 / used.len() as f32)
}

use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::PredictorConfig;
use super::length::{LengthBuckets, LengthPredictor};
use super::loss::{kl_loss_tensor, weighted_nll_tensor};
use super::model::{sample_eps, PredictorModel, TokenBatch, LOG_VAR_RANGE};
use super::signal::sample_noise_signal;
use super::tokens::{Token, TokenState};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::optim::{check_finite, lr_at, Adam};
use crate::rng::{derive_seed, labeled_seed, rng_from, Rng};
use crate::rvq::{CodeSequence, MotionCodec};
use crate::syndata::{length_augment, CaptionTokens, Dataset, MotionSequence};

pub const PREDICTOR_KIND: &str = "predictor";
pub const CURVE_FILE: &str = "curve.json";

/// Number of masked positions for a schedule draw `u` in `[0, 1)`:
/// `ceil(cos(pi u / 2) len)`, at least one.
pub fn mask_count(u: f64, len: usize) -> usize {
    let c = ((std::f64::consts::FRAC_PI_2 * u).cos() * len as f64).ceil() as usize;
    c.clamp(1, len.max(1))
}

/// Masked layer-0 tokens for one sample. When every position is hidden the
/// sequence is all EMPTY, matching the first decoding step.
pub fn mask_tokens(codes: &[usize], rng: &mut Rng) -> (TokenState, Vec<bool>) {
    let len = codes.len();
    let count = mask_count(rng.random::<f64>(), len);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let mut masked = vec![false; len];
    for &i in &order[..count] {
        masked[i] = true;
    }
    let hidden = if count == len { Token::Empty } else { Token::Mask };
    let tokens = codes
        .iter()
        .zip(&masked)
        .map(|(&c, &m)| if m { hidden } else { Token::Code(c as u32) })
        .collect();
    (TokenState { tokens }, masked)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: usize,
    pub text_samples: usize,
    pub noise_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorCurvePoint {
    pub epoch: usize,
    pub loss: f32,
    pub masked_nll: f32,
    /// `kl_weight * KL`, the KL contribution to the loss.
    pub kl_term: f32,
    pub residual_nll: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictorManifest {
    predictor: PredictorConfig,
    codec_fingerprint: String,
    codebook_size: usize,
    code_dim: usize,
    quantizer_layers: usize,
    max_tokens: usize,
    length_buckets: LengthBuckets,
    stats: TrainStats,
}

pub struct PredictorCheckpoint {
    pub model: PredictorModel,
    pub length: LengthPredictor,
    pub codec_fingerprint: String,
    pub stats: TrainStats,
    pub curve: Vec<PredictorCurvePoint>,
}

impl PredictorCheckpoint {
    pub fn save(&self, dir: &Path, overwrite: bool) -> Result<String> {
        let m = &self.model;
        let manifest = PredictorManifest {
            predictor: m.config.clone(),
            codec_fingerprint: self.codec_fingerprint.clone(),
            codebook_size: m.codebook_size,
            code_dim: m.code_dim,
            quantizer_layers: m.quantizer_layers,
            max_tokens: m.max_tokens,
            length_buckets: self.length.buckets,
            stats: self.stats,
        };
        let mut arrays = m.params().to_arrays()?;
        arrays.push(self.length.to_array());
        let fp = write_checkpoint(dir, PREDICTOR_KIND, &manifest, &arrays, overwrite)?;
        let p = dir.join(CURVE_FILE);
        std::fs::write(&p, serde_json::to_vec_pretty(&self.curve)?).map_err(|e| Error::io(p, e))?;
        Ok(fp)
    }

    /// Load against the codec it was trained with; a different codec
    /// fingerprint is refused.
    pub fn load(dir: &Path, codec: &MotionCodec, codec_fingerprint: &str) -> Result<(Self, String)> {
        let mut ck = read_checkpoint::<PredictorManifest>(dir, PREDICTOR_KIND)?;
        let cfg = ck.config.clone();
        if cfg.codec_fingerprint != codec_fingerprint {
            return Err(Error::Prerequisite(format!(
                "predictor at {} was trained against codec {}, but codec {} was supplied",
                dir.display(),
                short(&cfg.codec_fingerprint),
                short(codec_fingerprint)
            )));
        }
        let length = LengthPredictor::from_array(cfg.length_buckets, &ck.take("length.weights")?)?;
        let model = PredictorModel::new(cfg.predictor, &codec.codebook.tables_flat(), cfg.code_dim, cfg.max_tokens)?;
        if model.codebook_size != cfg.codebook_size || model.quantizer_layers != cfg.quantizer_layers {
            return Err(Error::format(dir.join("config.json"), "codebook shape disagrees with the codec"));
        }
        model.params().load_arrays(&ck.arrays)?;
        let curve = std::fs::read(dir.join(CURVE_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        Ok((
            PredictorCheckpoint {
                model,
                length,
                codec_fingerprint: cfg.codec_fingerprint,
                stats: cfg.stats,
                curve,
            },
            ck.fingerprint,
        ))
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

/// One assembled training or evaluation batch.
struct Batch {
    signals: Tensor,
    tokens: TokenBatch,
    targets: Tensor,
    masked: Tensor,
    valid: Tensor,
    all_codes: Tensor,
    residual_layers: Vec<usize>,
    residual_targets: Tensor,
}

struct Item<'a> {
    caption: &'a CaptionTokens,
    codes: CodeSequence,
    noise: Option<Vec<f32>>,
}

fn assemble(model: &PredictorModel, items: &[Item], rng: &mut Rng) -> Result<Batch> {
    let b = items.len();
    let v = model.quantizer_layers;
    let k = model.codebook_size;
    let mut states = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    for it in items {
        let (s, m) = mask_tokens(&it.codes.layer(0), rng);
        states.push(s);
        masks.push(m);
    }
    let state_refs: Vec<&TokenState> = states.iter().collect();
    let tokens = TokenBatch::new(&state_refs, k)?;
    let l = tokens.max_len();

    let mut targets = vec![0u32; b * l];
    let mut masked = vec![0f32; b * l];
    let mut valid = vec![0f32; b * l];
    let mut all = vec![0u32; b * l * v];
    let mut residual_layers = Vec::with_capacity(b);
    let mut residual_targets = vec![0u32; b * l];
    for (i, it) in items.iter().enumerate() {
        let layer = if v > 1 { rng.random_range(1..v) } else { 0 };
        residual_layers.push(layer);
        for (t, row) in it.codes.indices.iter().enumerate() {
            targets[i * l + t] = row[0] as u32;
            masked[i * l + t] = if masks[i][t] { 1.0 } else { 0.0 };
            valid[i * l + t] = 1.0;
            for (u, &c) in row.iter().enumerate() {
                all[(i * l + t) * v + u] = c as u32;
            }
            residual_targets[i * l + t] = row[layer] as u32;
        }
    }

    let captions: Vec<&CaptionTokens> = items.iter().map(|it| it.caption).collect();
    let text = model.encode_text_batch(&captions)?;
    let signals = if items.iter().any(|it| it.noise.is_some()) {
        let dg = model.config.signal_dim;
        let mut noise = vec![0f32; b * dg];
        let mut select = vec![0f32; b];
        for (i, it) in items.iter().enumerate() {
            if let Some(n) = &it.noise {
                noise[i * dg..(i + 1) * dg].copy_from_slice(n);
                select[i] = 1.0;
            }
        }
        let select = Tensor::from_vec(select, (b, 1), &Device::Cpu)?;
        let keep = (1.0 - &select)?;
        (text.broadcast_mul(&keep)? + Tensor::from_vec(noise, (b, dg), &Device::Cpu)?.broadcast_mul(&select)?)?
    } else {
        text
    };
    let dev = &Device::Cpu;
    Ok(Batch {
        signals,
        tokens,
        targets: Tensor::from_vec(targets, (b, l), dev)?,
        masked: Tensor::from_vec(masked, (b, l), dev)?,
        valid: Tensor::from_vec(valid, (b, l), dev)?,
        all_codes: Tensor::from_vec(all, (b, l, v), dev)?,
        residual_layers,
        residual_targets: Tensor::from_vec(residual_targets, (b, l), dev)?,
    })
}

struct StepLosses {
    total: Tensor,
    nll: Tensor,
    kl_term: Option<Tensor>,
    residual: Option<Tensor>,
}

fn losses(model: &PredictorModel, batch: &Batch, rng: &mut Rng, step: usize) -> Result<StepLosses> {
    let cfg = &model.config;
    let eps = if cfg.variational {
        let (b, l) = batch.targets.dims2()?;
        Some(sample_eps(rng, (b, l, cfg.latent_dim))?)
    } else {
        None
    };
    let out = model.forward_batch(&batch.signals, &batch.tokens, eps.as_ref(), cfg.variational)?;
    let nll = weighted_nll_tensor(&out.log_probs, &batch.targets, &batch.masked)?;
    let mut total = nll.clone();
    let mut kl_term = None;
    if let Some((mu, lv)) = &out.gaussian {
        let lo = lv.min_all()?.to_scalar::<f32>()?;
        let hi = lv.max_all()?.to_scalar::<f32>()?;
        if lo < LOG_VAR_RANGE.0 || hi > LOG_VAR_RANGE.1 {
            return Err(Error::Training {
                step,
                reason: format!("log-variance left its clamp range: [{lo}, {hi}]"),
            });
        }
        let kl = (kl_loss_tensor(mu, lv, &batch.valid)? * cfg.kl_weight)?;
        total = (total + &kl)?;
        kl_term = Some(kl);
    }
    let mut residual = None;
    if model.quantizer_layers > 1 {
        let lp = model.residual_batch(
            &batch.signals,
            &batch.all_codes,
            &batch.tokens.lengths,
            &batch.residual_layers,
        )?;
        let r = weighted_nll_tensor(&lp, &batch.residual_targets, &batch.valid)?;
        total = (total + &r)?;
        residual = Some(r);
    }
    Ok(StepLosses {
        total,
        nll,
        kl_term,
        residual,
    })
}

fn scalar(t: &Option<Tensor>) -> Result<f32> {
    Ok(match t {
        Some(t) => t.to_scalar::<f32>()?,
        None => 0.0,
    })
}

/// Train the stage-two predictor on codes from a frozen codec.
pub fn train_predictor(
    dataset: &Dataset,
    codec: &MotionCodec,
    codec_fingerprint: &str,
    config: &PredictorConfig,
) -> Result<PredictorCheckpoint> {
    config.validate()?;
    let train: Vec<usize> = dataset.train_indices.clone();
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let l = codec.downsample();
    let max_tokens = dataset.length_range.1 / l;
    let model = PredictorModel::new(config.clone(), &codec.codebook.tables_flat(), codec.config.rvq.code_dim, max_tokens)?;

    let motions: Vec<&MotionSequence> = train.iter().map(|&i| &dataset.samples[i].motion).collect();
    let codes = codec.tokenize(&motions)?;

    let buckets = LengthBuckets::for_range(dataset.length_range, l)?;
    let pairs: Vec<(&CaptionTokens, usize)> =
        dataset.train().map(|s| (&s.caption, s.motion.len())).collect();
    let length = LengthPredictor::fit(buckets, &pairs, 300, 2.0);

    let mut rng = rng_from(labeled_seed(config.seed, "predictor-train"));
    let mut opt = Adam::new(model.params().vars(), config.learning_rate, 1.0)?;
    let batch = config.batch_size.min(train.len());
    let steps_per_epoch = (train.len() / batch).max(1);
    let total_steps = steps_per_epoch * config.epochs;
    let mut stats = TrainStats::default();
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let noise_base = labeled_seed(config.seed, "predictor-noise");

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0f32; 4];
        for chunk in order.chunks(batch).take(steps_per_epoch) {
            opt.set_lr(lr_at(step, total_steps, config.learning_rate, config.warmup_steps));
            let mut items = Vec::with_capacity(chunk.len());
            let mut augmented: Vec<(usize, MotionSequence)> = Vec::new();
            for (slot, &j) in chunk.iter().enumerate() {
                let sample = &dataset.samples[train[j]];
                let noise = rng.random::<f64>() < config.p_noise;
                if noise {
                    let seed = derive_seed(noise_base, stats.noise_samples as u64);
                    stats.noise_samples += 1;
                    let m = length_augment(&sample.motion, config.length_scale_range, dataset.length_range, seed)?;
                    augmented.push((slot, m));
                    items.push(Item {
                        caption: &sample.caption,
                        codes: CodeSequence { indices: vec![] },
                        noise: Some(sample_noise_signal(seed, config.signal_dim).vector),
                    });
                } else {
                    stats.text_samples += 1;
                    items.push(Item {
                        caption: &sample.caption,
                        codes: codes[j].clone(),
                        noise: None,
                    });
                }
            }
            if !augmented.is_empty() {
                let refs: Vec<&MotionSequence> = augmented.iter().map(|(_, m)| m).collect();
                for ((slot, _), c) in augmented.iter().zip(codec.tokenize(&refs)?) {
                    items[*slot].codes = c;
                }
            }
            let b = assemble(&model, &items, &mut rng)?;
            let ls = losses(&model, &b, &mut rng, step)?;
            let total = ls.total.to_scalar::<f32>()?;
            check_finite(total, step)?;
            opt.step(&ls.total, step)?;
            sums[0] += total;
            sums[1] += ls.nll.to_scalar::<f32>()?;
            sums[2] += scalar(&ls.kl_term)?;
            sums[3] += scalar(&ls.residual)?;
            step += 1;
            stats.steps += 1;
        }
        let k = steps_per_epoch as f32;
        log::debug!("predictor epoch {epoch}: loss {:.4} nll {:.4}", sums[0] / k, sums[1] / k);
        curve.push(PredictorCurvePoint {
            epoch,
            loss: sums[0] / k,
            masked_nll: sums[1] / k,
            kl_term: sums[2] / k,
            residual_nll: sums[3] / k,
        });
    }
    Ok(PredictorCheckpoint {
        model,
        length,
        codec_fingerprint: codec_fingerprint.to_string(),
        stats,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutNll {
    pub masked_nll: f64,
    pub residual_nll: f64,
    /// `ln K`, the uniform-prediction reference.
    pub uniform: f64,
}

/// Masked and residual NLL on the test split with text conditioning.
pub fn heldout_nll(model: &PredictorModel, codec: &MotionCodec, dataset: &Dataset, seed: u64) -> Result<HeldOutNll> {
    let test: Vec<&crate::syndata::Sample> = dataset.test().collect();
    if test.is_empty() {
        return Err(Error::Argument("test split is empty".into()));
    }
    let motions: Vec<&MotionSequence> = test.iter().map(|s| &s.motion).collect();
    let codes = codec.tokenize(&motions)?;
    let mut rng = rng_from(seed);
    let (mut nll, mut res, mut n) = (0f64, 0f64, 0usize);
    for (chunk_s, chunk_c) in test.chunks(64).zip(codes.chunks(64)) {
        let items: Vec<Item> = chunk_s
            .iter()
            .zip(chunk_c)
            .map(|(s, c)| Item {
                caption: &s.caption,
                codes: c.clone(),
                noise: None,
            })
            .collect();
        let b = assemble(model, &items, &mut rng)?;
        let ls = losses(model, &b, &mut rng, 0)?;
        let w = items.len() as f64;
        nll += ls.nll.to_scalar::<f32>()? as f64 * w;
        res += scalar(&ls.residual)? as f64 * w;
        n += items.len();
    }
    Ok(HeldOutNll {
        masked_nll: nll / n as f64,
        residual_nll: res / n as f64,
        uniform: (model.codebook_size as f64).ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_count_schedule() {
        assert_eq!(mask_count(0.0, 10), 10);
        assert_eq!(mask_count(0.999_999, 10), 1);
        assert_eq!(mask_count(0.5, 10), 8); // ceil(7.07)
        for len in 1..20 {
            for i in 0..100 {
                let c = mask_count(i as f64 / 100.0, len);
                assert!((1..=len).contains(&c));
            }
        }
    }

    #[test]
    fn masking_uses_empty_only_when_all_hidden() {
        let mut rng = rng_from(5);
        let codes = vec![3, 1, 4, 1, 5, 9];
        for _ in 0..200 {
            let (s, m) = mask_tokens(&codes, &mut rng);
            let count = m.iter().filter(|&&x| x).count();
            assert!(count >= 1);
            for (i, t) in s.tokens.iter().enumerate() {
                match t {
                    Token::Code(c) => assert!(!m[i] && *c as usize == codes[i]),
                    Token::Empty => assert!(m[i] && count == codes.len()),
                    Token::Mask => assert!(m[i] && count < codes.len()),
                    Token::Pad => panic!("no padding inside a sample"),
                }
            }
        }
    }
}

//! Contrastive text/motion feature extractor used by every metric.

use std::path::Path;

use candle_core::{Device, Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint, NamedArray};
use crate::nn::layers::log_softmax;
use crate::nn::optim::{check_finite, lr_at, Adam};
use crate::nn::{to_vec, Conv1d, Embedding, Linear, ParamStore};
use crate::rng::{labeled_seed, rng_from};
use crate::syndata::caption::{generic_caption, VOCAB_SIZE};
use crate::syndata::{CaptionTokens, Dataset, MotionSequence};

pub const EXTRACTOR_KIND: &str = "extractor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Feature width (D_e).
    pub embed_dim: usize,
    pub width: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            embed_dim: 32,
            width: 64,
            temperature: 0.1,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.width == 0 || self.batch_size < 2 || !(self.temperature > 0.0) {
            return Err(Error::Config("extractor sizes must be positive, batch at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExtractorManifest {
    config: ExtractorConfig,
    feature_dim: usize,
}

pub struct EvalExtractor {
    pub config: ExtractorConfig,
    pub feature_dim: usize,
    mean: Vec<f32>,
    std: Vec<f32>,
    params: ParamStore,
    convs: Vec<Conv1d>,
    motion_out: Linear,
    text_embed: Embedding,
    text_hidden: Linear,
    text_out: Linear,
}

/// `(B, 1, T)` mask of each row's first `valid[b]` steps, optionally
/// scaled to average.
fn time_mask(valid: &[usize], t: usize, average: bool) -> Result<Tensor> {
    let mut m = vec![0f32; valid.len() * t];
    for (i, &v) in valid.iter().enumerate() {
        let v = v.clamp(1, t);
        let val = if average { 1.0 / v as f32 } else { 1.0 };
        m[i * t..i * t + v].iter_mut().for_each(|x| *x = val);
    }
    Ok(Tensor::from_vec(m, (valid.len(), 1, t), &Device::Cpu)?)
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let n = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&n)?)
}

impl EvalExtractor {
    pub fn new(config: ExtractorConfig, feature_dim: usize, mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(labeled_seed(config.seed, "extractor-init"));
        let w = config.width;
        let convs = vec![
            Conv1d::new(&mut ps, "motion.conv0", feature_dim, w, 3, 1, 1, 1)?,
            Conv1d::new(&mut ps, "motion.conv1", w, w, 4, 2, 1, 1)?,
            Conv1d::new(&mut ps, "motion.conv2", w, w, 4, 2, 1, 1)?,
        ];
        let motion_out = Linear::new(&mut ps, "motion.out", w, config.embed_dim)?;
        let text_embed = Embedding::new(&mut ps, "text.embed", VOCAB_SIZE, w)?;
        let text_hidden = Linear::new(&mut ps, "text.hidden", w, w)?;
        let text_out = Linear::new(&mut ps, "text.out", w, config.embed_dim)?;
        Ok(EvalExtractor {
            config,
            feature_dim,
            mean,
            std: std.into_iter().map(|s| s.max(1e-3)).collect(),
            params: ps,
            convs,
            motion_out,
            text_embed,
            text_hidden,
            text_out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(B, D_e)` unit-norm motion features; motions are zero-padded and
    /// pooled over their valid span.
    pub fn motion_tensor(&self, motions: &[&MotionSequence]) -> Result<Tensor> {
        let d = self.feature_dim;
        let t = motions.iter().map(|m| m.len()).max().unwrap_or(0).div_ceil(4) * 4;
        if t == 0 {
            return Err(Error::Argument("no motions to embed".into()));
        }
        let b = motions.len();
        let mut data = vec![0f32; b * d * t];
        for (i, m) in motions.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::Argument(format!("motion has {} channels, extractor expects {d}", m.dim())));
            }
            for f in 0..m.len() {
                for (c, v) in m.frame(f).iter().enumerate() {
                    data[(i * d + c) * t + f] = (v - self.mean[c]) / self.std[c];
                }
            }
        }
        let mut h = Tensor::from_vec(data, (b, d, t), &Device::Cpu)?;
        // zero every activation past a motion's end so padding never leaks
        let mut valid: Vec<usize> = motions.iter().map(|m| m.len()).collect();
        let mut prev = t;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
            let tq = h.dim(2)?;
            if tq < prev {
                valid.iter_mut().for_each(|v| *v = v.div_ceil(2));
            }
            prev = tq;
            h = h.broadcast_mul(&time_mask(&valid, tq, false)?)?;
        }
        let tq = h.dim(2)?;
        let pooled = h.broadcast_mul(&time_mask(&valid, tq, true)?)?.sum(2)?;
        l2_normalize(&self.motion_out.forward(&pooled)?)
    }

    /// `(B, D_e)` unit-norm caption features.
    pub fn text_tensor(&self, captions: &[&CaptionTokens]) -> Result<Tensor> {
        let generic = generic_caption();
        let caps: Vec<&CaptionTokens> = captions.iter().map(|c| if c.is_empty() { &generic } else { *c }).collect();
        let max = caps.iter().map(|c| c.tokens.len()).max().unwrap_or(1);
        let b = caps.len();
        let mut ids = vec![0u32; b * max];
        let mut weights = vec![0f32; b * max];
        for (i, c) in caps.iter().enumerate() {
            for (j, &t) in c.tokens.iter().enumerate() {
                ids[i * max + j] = t as u32;
                weights[i * max + j] = 1.0 / c.tokens.len() as f32;
            }
        }
        let ids = Tensor::from_vec(ids, (b, max), &Device::Cpu)?;
        let weights = Tensor::from_vec(weights, (b, max, 1), &Device::Cpu)?;
        let pooled = self.text_embed.forward(&ids)?.broadcast_mul(&weights)?.sum(1)?;
        let h = self.text_hidden.forward(&pooled)?.relu()?;
        l2_normalize(&self.text_out.forward(&h)?)
    }

    fn rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
        let (b, e) = t.dims2()?;
        let flat = to_vec(t)?;
        Ok((0..b).map(|i| flat[i * e..(i + 1) * e].to_vec()).collect())
    }

    pub fn embed_motions(&self, motions: &[&MotionSequence]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(motions.len());
        for chunk in motions.chunks(128) {
            out.extend(Self::rows(&self.motion_tensor(chunk)?)?);
        }
        Ok(out)
    }

    pub fn embed_texts(&self, captions: &[&CaptionTokens]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(captions.len());
        for chunk in captions.chunks(256) {
            out.extend(Self::rows(&self.text_tensor(chunk)?)?);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path, overwrite: bool) -> Result<String> {
        let mut arrays = self.params.to_arrays()?;
        arrays.push(NamedArray::new("norm.mean", vec![self.feature_dim], self.mean.clone()));
        arrays.push(NamedArray::new("norm.std", vec![self.feature_dim], self.std.clone()));
        let manifest = ExtractorManifest {
            config: self.config.clone(),
            feature_dim: self.feature_dim,
        };
        write_checkpoint(dir, EXTRACTOR_KIND, &manifest, &arrays, overwrite)
    }

    pub fn load(dir: &Path) -> Result<(Self, String)> {
        let mut ck = read_checkpoint::<ExtractorManifest>(dir, EXTRACTOR_KIND)?;
        let mean = ck.take("norm.mean")?.data;
        let std = ck.take("norm.std")?.data;
        let ex = EvalExtractor::new(ck.config.config.clone(), ck.config.feature_dim, mean, std)?;
        ex.params.load_arrays(&ck.arrays)?;
        Ok((ex, ck.fingerprint))
    }
}

/// Symmetric contrastive loss. Columns holding the same caption as the row
/// share the target mass, so duplicate captions are not treated as negatives.
fn contrastive_loss(motion: &Tensor, text: &Tensor, captions: &[&CaptionTokens], temperature: f64) -> Result<Tensor> {
    let b = captions.len();
    let mut target = vec![0f32; b * b];
    for i in 0..b {
        let same: Vec<usize> = (0..b).filter(|&j| captions[j].tokens == captions[i].tokens).collect();
        for &j in &same {
            target[i * b + j] = 1.0 / same.len() as f32;
        }
    }
    let target = Tensor::from_vec(target, (b, b), &Device::Cpu)?;
    let logits = (motion.matmul(&text.t()?)? / temperature)?;
    let a = (log_softmax(&logits)? * &target)?.sum_all()?;
    let c = (log_softmax(&logits.t()?.contiguous()?)? * &target)?.sum_all()?;
    Ok(((a + c)? / (-2.0 * b as f64))?)
}

/// Train the extractor on the training split.
pub fn train_eval_extractor(dataset: &Dataset, config: &ExtractorConfig) -> Result<(EvalExtractor, Vec<f32>)> {
    config.validate()?;
    let (mean, std) = Dataset::channel_stats(dataset.train(), dataset.feature_dim);
    let ex = EvalExtractor::new(config.clone(), dataset.feature_dim, mean, std)?;
    let train: Vec<usize> = dataset.train_indices.clone();
    if train.len() < 2 {
        return Err(Error::Argument("extractor training needs at least two samples".into()));
    }
    let batch = config.batch_size.min(train.len());
    let steps_per_epoch = (train.len() / batch).max(1);
    let total = steps_per_epoch * config.epochs;
    let mut opt = Adam::new(ex.params.vars(), config.learning_rate, 1.0)?;
    let mut rng = rng_from(labeled_seed(config.seed, "extractor-train"));
    let mut order = train.clone();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0f32;
        for chunk in order.chunks(batch).take(steps_per_epoch) {
            opt.set_lr(lr_at(step, total, config.learning_rate, 50));
            let motions: Vec<&MotionSequence> = chunk.iter().map(|&i| &dataset.samples[i].motion).collect();
            let captions: Vec<&CaptionTokens> = chunk.iter().map(|&i| &dataset.samples[i].caption).collect();
            let loss = contrastive_loss(
                &ex.motion_tensor(&motions)?,
                &ex.text_tensor(&captions)?,
                &captions,
                config.temperature,
            )?;
            let v = loss.to_scalar::<f32>()?;
            check_finite(v, step)?;
            opt.step(&loss, step)?;
            sum += v;
            step += 1;
        }
        curve.push(sum / steps_per_epoch as f32);
    }
    Ok((ex, curve))
}

/// Fraction of held-out (motion, true caption, other caption) triples where
/// the true caption is closer. Other captions are drawn from the test split
/// among captions with different tokens.
pub fn matched_pair_accuracy(ex: &EvalExtractor, dataset: &Dataset, seed: u64) -> Result<f64> {
    use rand::Rng as _;
    let test: Vec<&crate::syndata::Sample> = dataset.test().collect();
    let motions: Vec<&MotionSequence> = test.iter().map(|s| &s.motion).collect();
    let caps: Vec<&CaptionTokens> = test.iter().map(|s| &s.caption).collect();
    let mf = ex.embed_motions(&motions)?;
    let tf = ex.embed_texts(&caps)?;
    let mut rng = rng_from(seed);
    let (mut good, mut n) = (0usize, 0usize);
    for i in 0..test.len() {
        for _ in 0..10 {
            let j = rng.random_range(0..test.len());
            if caps[j].tokens == caps[i].tokens {
                continue;
            }
            let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>();
            if dot(&mf[i], &tf[i]) > dot(&mf[i], &tf[j]) {
                good += 1;
            }
            n += 1;
        }
    }
    Ok(good as f64 / n.max(1) as f64)
}

//! Convolutional motion autoencoder around the layered codebook.

use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::codebook::LayeredCodebook;
use super::config::RvqConfig;
use super::latent::{CodeSequence, LatentSequence};
use super::quantize::{dequantize_vector, residual_quantize, ResidualCodes};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint, NamedArray};
use crate::nn::{to_vec, Conv1d, ParamStore};
use crate::syndata::MotionSequence;

pub const CODEC_KIND: &str = "rvq";

#[derive(Clone)]
struct ResBlock {
    conv: Conv1d,
    proj: Conv1d,
}

impl ResBlock {
    fn new(ps: &mut ParamStore, name: &str, width: usize, dilation: usize) -> Result<Self> {
        Ok(ResBlock {
            conv: Conv1d::new(ps, &format!("{name}.conv"), width, width, 3, 1, dilation, dilation)?,
            proj: Conv1d::new(ps, &format!("{name}.proj"), width, width, 1, 1, 0, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.proj.forward_btc(&self.conv.forward_btc(&x.relu()?)?.relu()?)?;
        Ok((x + h)?)
    }
}

/// Strided 1-D conv stack over channels-last input: `(B, T, d) -> (B, T / l, d_c)`.
#[derive(Clone)]
struct Encoder {
    input: Conv1d,
    down: Vec<(Conv1d, Vec<ResBlock>)>,
    output: Conv1d,
}

impl Encoder {
    fn new(ps: &mut ParamStore, feature_dim: usize, cfg: &RvqConfig) -> Result<Self> {
        let w = cfg.hidden_width;
        let input = Conv1d::new(ps, "encoder.input", feature_dim, w, 3, 1, 1, 1)?;
        let mut down = Vec::new();
        for i in 0..cfg.levels() {
            let conv = Conv1d::new(ps, &format!("encoder.down{i}"), w, w, 4, 2, 1, 1)?;
            let blocks = (0..cfg.res_blocks)
                .map(|j| ResBlock::new(ps, &format!("encoder.down{i}.res{j}"), w, 3usize.pow(j as u32)))
                .collect::<Result<Vec<_>>>()?;
            down.push((conv, blocks));
        }
        let output = Conv1d::new(ps, "encoder.output", w, cfg.code_dim, 3, 1, 1, 1)?;
        Ok(Encoder { input, down, output })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward_btc(x)?.relu()?;
        for (conv, blocks) in &self.down {
            h = conv.forward_btc(&h)?;
            for b in blocks {
                h = b.forward(&h)?;
            }
        }
        let z = self.output.forward_btc(&h.relu()?)?;
        // fixed-scale latent: zero mean, unit variance per step
        let z = z.broadcast_sub(&z.mean_keepdim(2)?)?;
        let var = z.sqr()?.mean_keepdim(2)?;
        Ok(z.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
    }
}

/// Mirror of the encoder with nearest-neighbour upsampling.
#[derive(Clone)]
struct Decoder {
    input: Conv1d,
    up: Vec<(Vec<ResBlock>, Conv1d)>,
    output: Conv1d,
}

fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, l, c) = x.dims3()?;
    Ok(x.unsqueeze(2)?.broadcast_as((b, l, 2, c))?.reshape((b, 2 * l, c))?)
}

impl Decoder {
    fn new(ps: &mut ParamStore, feature_dim: usize, cfg: &RvqConfig) -> Result<Self> {
        let w = cfg.hidden_width;
        let input = Conv1d::new(ps, "decoder.input", cfg.code_dim, w, 3, 1, 1, 1)?;
        let mut up = Vec::new();
        for i in 0..cfg.levels() {
            let blocks = (0..cfg.res_blocks)
                .map(|j| ResBlock::new(ps, &format!("decoder.up{i}.res{j}"), w, 3usize.pow(j as u32)))
                .collect::<Result<Vec<_>>>()?;
            let conv = Conv1d::new(ps, &format!("decoder.up{i}"), w, w, 3, 1, 1, 1)?;
            up.push((blocks, conv));
        }
        let output = Conv1d::new(ps, "decoder.output", w, feature_dim, 3, 1, 1, 1)?;
        Ok(Decoder { input, up, output })
    }

    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward_btc(z)?.relu()?;
        for (blocks, conv) in &self.up {
            for b in blocks {
                h = b.forward(&h)?;
            }
            h = conv.forward_btc(&upsample2(&h)?)?.relu()?;
        }
        self.output.forward_btc(&h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub rvq: RvqConfig,
    pub feature_dim: usize,
    pub frame_rate: f32,
}

/// Stage-one codec: encoder, layered residual codebook, decoder, and the
/// per-channel normalisation applied to motions on the way in and out.
pub struct MotionCodec {
    pub config: CodecConfig,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub codebook: LayeredCodebook,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

impl MotionCodec {
    pub fn new(config: CodecConfig, mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        config.rvq.validate()?;
        let d = config.feature_dim;
        if mean.len() != d || std.len() != d {
            return Err(Error::Argument("normalisation stats do not match feature_dim".into()));
        }
        let mut params = ParamStore::new(crate::rng::labeled_seed(config.rvq.seed, "codec-init"));
        let encoder = Encoder::new(&mut params, d, &config.rvq)?;
        let decoder = Decoder::new(&mut params, d, &config.rvq)?;
        let codebook = LayeredCodebook::new(config.rvq.num_layers, config.rvq.codebook_size, config.rvq.code_dim)?;
        let std = std.into_iter().map(|s| s.max(1e-3)).collect();
        Ok(MotionCodec {
            config,
            mean,
            std,
            codebook,
            params,
            encoder,
            decoder,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn downsample(&self) -> usize {
        self.config.rvq.downsample
    }

    /// Normalised `(B, T, d)` batch from equal-length motions.
    pub fn motions_to_tensor(&self, motions: &[&MotionSequence]) -> Result<Tensor> {
        let d = self.config.feature_dim;
        let t = motions.first().map_or(0, |m| m.len());
        let mut data = Vec::with_capacity(motions.len() * t * d);
        for m in motions {
            if m.len() != t || m.dim() != d {
                return Err(Error::Argument("batched motions must share shape".into()));
            }
            for row in m.as_slice().chunks(d) {
                data.extend(row.iter().zip(&self.mean).zip(&self.std).map(|((v, mu), s)| (v - mu) / s));
            }
        }
        Ok(Tensor::from_vec(data, (motions.len(), t, d), &Device::Cpu)?)
    }

    /// `(B, T, d)` normalised -> `(B, T/l, d_c)`.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    /// `(B, T', d_c)` -> `(B, T' l, d)` normalised.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }

    pub fn encode(&self, motion: &MotionSequence) -> Result<LatentSequence> {
        Ok(self.encode_many(&[motion])?.pop().expect("one latent"))
    }

    /// Encode motions of any lengths; each is cropped to a multiple of `l`.
    pub fn encode_many(&self, motions: &[&MotionSequence]) -> Result<Vec<LatentSequence>> {
        let l = self.downsample();
        let mut out: Vec<Option<LatentSequence>> = vec![None; motions.len()];
        let cropped: Vec<MotionSequence> = motions
            .iter()
            .map(|m| {
                if m.len() < l {
                    Err(Error::Argument(format!("motion of {} frames shorter than downsample rate {l}", m.len())))
                } else {
                    Ok(m.cropped_to_multiple(l))
                }
            })
            .collect::<Result<_>>()?;
        for (len, group) in group_by_len(cropped.iter().map(|m| m.len())) {
            let batch: Vec<&MotionSequence> = group.iter().map(|&i| &cropped[i]).collect();
            let z = self.encode_tensor(&self.motions_to_tensor(&batch)?)?;
            let dc = self.config.rvq.code_dim;
            let flat = to_vec(&z)?;
            let per = len / l * dc;
            for (j, &i) in group.iter().enumerate() {
                out[i] = Some(LatentSequence::new(flat[j * per..(j + 1) * per].to_vec(), dc, l)?);
            }
        }
        Ok(out.into_iter().map(|o| o.expect("filled")).collect())
    }

    pub fn quantize(&self, latents: &LatentSequence) -> (CodeSequence, Vec<ResidualCodes>) {
        let tables = self.codebook.tables();
        let per: Vec<ResidualCodes> = (0..latents.len()).map(|i| residual_quantize(latents.row(i), &tables)).collect();
        let codes = CodeSequence {
            indices: per.iter().map(|r| r.indices.clone()).collect(),
        };
        (codes, per)
    }

    /// Sum of the indexed codes over layers. Sequences with fewer layers than
    /// the codebook are summed over their layers only.
    pub fn dequantize(&self, codes: &CodeSequence) -> Result<LatentSequence> {
        let tables = self.codebook.tables();
        let dc = self.config.rvq.code_dim;
        let mut out = Vec::with_capacity(codes.len() * dc);
        for row in &codes.indices {
            if row.len() > tables.len() {
                return Err(Error::Argument(format!("{} layers of codes, codebook has {}", row.len(), tables.len())));
            }
            out.extend(dequantize_vector(row, &tables[..row.len()])?);
        }
        LatentSequence::new(out, dc, self.downsample())
    }

    pub fn decode(&self, latents: &LatentSequence) -> Result<MotionSequence> {
        Ok(self.decode_many(&[latents])?.pop().expect("one motion"))
    }

    pub fn decode_many(&self, latents: &[&LatentSequence]) -> Result<Vec<MotionSequence>> {
        if latents.iter().any(|z| z.is_empty()) {
            return Err(Error::Argument("cannot decode an empty latent sequence".into()));
        }
        let d = self.config.feature_dim;
        let dc = self.config.rvq.code_dim;
        let l = self.downsample();
        let mut out: Vec<Option<MotionSequence>> = vec![None; latents.len()];
        for (len, group) in group_by_len(latents.iter().map(|z| z.len())) {
            let data: Vec<f32> = group.iter().flat_map(|&i| latents[i].latents.iter().copied()).collect();
            let z = Tensor::from_vec(data, (group.len(), len, dc), &Device::Cpu)?;
            let flat = to_vec(&self.decode_tensor(&z)?)?;
            let per = len * l * d;
            for (j, &i) in group.iter().enumerate() {
                let frames = flat[j * per..(j + 1) * per]
                    .chunks(d)
                    .flat_map(|row| row.iter().zip(&self.mean).zip(&self.std).map(|((v, mu), s)| v * s + mu))
                    .collect();
                out[i] = Some(MotionSequence::new(frames, d, self.config.frame_rate)?);
            }
        }
        Ok(out.into_iter().map(|o| o.expect("filled")).collect())
    }

    /// encode -> residual quantize -> dequantize -> decode.
    pub fn reconstruct(&self, motion: &MotionSequence) -> Result<MotionSequence> {
        let z = self.encode(motion)?;
        let (codes, _) = self.quantize(&z);
        self.decode(&self.dequantize(&codes)?)
    }

    pub fn tokenize(&self, motions: &[&MotionSequence]) -> Result<Vec<CodeSequence>> {
        Ok(self.encode_many(motions)?.iter().map(|z| self.quantize(z).0).collect())
    }

    pub fn save(&self, dir: &Path, overwrite: bool) -> Result<String> {
        let mut arrays = self.params.to_arrays()?;
        arrays.push(NamedArray::new("norm.mean", vec![self.mean.len()], self.mean.clone()));
        arrays.push(NamedArray::new("norm.std", vec![self.std.len()], self.std.clone()));
        arrays.extend(self.codebook.to_arrays());
        write_checkpoint(dir, CODEC_KIND, &self.config, &arrays, overwrite)
    }

    /// Load a codec and return it with its fingerprint.
    pub fn load(dir: &Path) -> Result<(Self, String)> {
        let mut ck = read_checkpoint::<CodecConfig>(dir, CODEC_KIND)?;
        let cfg = ck.config.clone();
        let mean = ck.take("norm.mean")?.data;
        let std = ck.take("norm.std")?.data;
        let codebook = LayeredCodebook::from_arrays(&mut ck, cfg.rvq.num_layers, cfg.rvq.codebook_size, cfg.rvq.code_dim)?;
        let mut codec = MotionCodec::new(cfg, mean, std)?;
        codec.params.load_arrays(&ck.arrays)?;
        codec.codebook = codebook;
        Ok((codec, ck.fingerprint))
    }
}

/// Indices grouped by equal length, in first-seen order.
pub(crate) fn group_by_len(lens: impl Iterator<Item = usize>) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, len) in lens.enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == len) {
            Some((_, g)) => g.push(i),
            None => groups.push((len, vec![i])),
        }
    }
    groups
}

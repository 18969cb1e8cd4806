//! The variational text-to-codes predictor.
//!
//! ```text
//! signal g ──proj──┐
//! tokens ──embed───┴─> [g; t_1..t_L] + pos ──N blocks──> e
//! e ──attn mean head──> mu, e ──attn log-var head──> log sigma^2   (clamped to [-10, 10])
//! z = mu + sigma * eps          (variational)   |   z = mu   (one-to-one baseline)
//! z ──residual MLP──> h ──<h, codebook_0>──> log-softmax over K codes
//! ```
//!
//! A second, unmasked transformer predicts residual quantizer layers from the
//! summed embeddings of the layers already decoded.

use candle_core::{DType, Device, Tensor, D};
use rand_distr::{Distribution, StandardNormal};

use super::config::PredictorConfig;
use super::signal::{SignalFeature, SignalKind};
use super::tokens::{CodeDistribution, LatentGaussian, Token, TokenState, SPECIAL_TOKENS};
use crate::error::{Error, Result};
use crate::nn::layers::{key_padding_bias, log_softmax, sinusoidal_positions};
use crate::nn::{to_vec, Embedding, LayerNorm, Linear, ParamStore, SelfAttention, TransformerBlock};
use crate::rng::Rng;
use crate::rvq::CodeSequence;
use crate::syndata::caption::{generic_caption, CaptionTokens, VOCAB_SIZE};

pub const LOG_VAR_RANGE: (f32, f32) = (-10.0, 10.0);

/// Standardise each row to zero mean, unit variance (no affine).
fn standardize(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let c = x.broadcast_sub(&mean)?;
    let var = c.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(c.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
}

struct TextEncoder {
    embed: Embedding,
    proj: Linear,
}

impl TextEncoder {
    fn new(ps: &mut ParamStore, dim: usize) -> Result<Self> {
        Ok(TextEncoder {
            embed: Embedding::new(ps, "text.embed", VOCAB_SIZE, 64)?,
            proj: Linear::new(ps, "text.proj", 64, dim)?,
        })
    }

    /// Mean-pooled token embeddings, projected and standardised: `(B, D_g)`.
    fn forward(&self, captions: &[&CaptionTokens]) -> Result<Tensor> {
        let generic = generic_caption();
        let captions: Vec<&CaptionTokens> = captions
            .iter()
            .map(|c| if c.is_empty() { &generic } else { *c })
            .collect();
        let max = captions.iter().map(|c| c.tokens.len()).max().unwrap_or(1);
        let mut ids = vec![0u32; captions.len() * max];
        let mut weights = vec![0f32; captions.len() * max];
        for (b, c) in captions.iter().enumerate() {
            let w = 1.0 / c.tokens.len() as f32;
            for (j, &t) in c.tokens.iter().enumerate() {
                ids[b * max + j] = t as u32;
                weights[b * max + j] = w;
            }
        }
        let ids = Tensor::from_vec(ids, (captions.len(), max), &Device::Cpu)?;
        let weights = Tensor::from_vec(weights, (captions.len(), max, 1), &Device::Cpu)?;
        let pooled = self.embed.forward(&ids)?.broadcast_mul(&weights)?.sum(1)?;
        standardize(&self.proj.forward(&pooled)?)
    }
}

/// Self-attention layer followed by a projection; used for the mean and
/// log-variance heads.
struct AttnHead {
    ln: LayerNorm,
    attn: SelfAttention,
    proj: Linear,
}

impl AttnHead {
    fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, out: usize, zero: bool) -> Result<Self> {
        Ok(AttnHead {
            ln: LayerNorm::new(ps, &format!("{name}.ln"), width)?,
            attn: SelfAttention::new(ps, &format!("{name}.attn"), width, heads)?,
            proj: if zero {
                Linear::zeros(ps, &format!("{name}.proj"), width, out)?
            } else {
                Linear::new(ps, &format!("{name}.proj"), width, out)?
            },
        })
    }

    fn forward(&self, e: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let h = (e + self.attn.forward(&self.ln.forward(e)?, Some(bias))?)?;
        self.proj.forward(&h)
    }
}

/// Residual MLP from latent to code-embedding space.
struct CodeHead {
    input: Linear,
    blocks: Vec<(LayerNorm, Linear, Linear)>,
    ln: LayerNorm,
    out: Linear,
}

impl CodeHead {
    fn new(ps: &mut ParamStore, cfg: &PredictorConfig, code_dim: usize) -> Result<Self> {
        let w = cfg.width;
        let blocks = (0..cfg.head_blocks)
            .map(|i| {
                Ok((
                    LayerNorm::new(ps, &format!("codehead.block{i}.ln"), w)?,
                    Linear::new(ps, &format!("codehead.block{i}.fc1"), w, 2 * w)?,
                    Linear::new(ps, &format!("codehead.block{i}.fc2"), 2 * w, w)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CodeHead {
            input: Linear::new(ps, "codehead.input", cfg.latent_dim, w)?,
            blocks,
            ln: LayerNorm::new(ps, "codehead.ln", w)?,
            out: Linear::new(ps, "codehead.out", w, code_dim)?,
        })
    }

    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward(z)?;
        for (ln, fc1, fc2) in &self.blocks {
            h = (&h + fc2.forward(&fc1.forward(&ln.forward(&h)?)?.relu()?)?)?;
        }
        self.out.forward(&self.ln.forward(&h)?)
    }
}

struct ResidualHead {
    signal_proj: Linear,
    code_embed: Vec<Embedding>,
    layer_embed: Embedding,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    out: Linear,
}

/// Output of a batched forward pass.
pub struct BatchOutput {
    /// `(B, L, K)` log-probabilities.
    pub log_probs: Tensor,
    /// `(B, L, D_z)` each, when the variational path ran.
    pub gaussian: Option<(Tensor, Tensor)>,
}

/// A batch of token sequences padded to a common length.
pub struct TokenBatch {
    pub ids: Tensor,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn new(states: &[&TokenState], codebook_size: usize) -> Result<Self> {
        let max = states.iter().map(|s| s.len()).max().unwrap_or(0);
        if max == 0 {
            return Err(Error::Argument("token states must be non-empty".into()));
        }
        let pad = Token::Pad.id(codebook_size);
        let mut ids = vec![pad; states.len() * max];
        for (b, s) in states.iter().enumerate() {
            for (j, t) in s.tokens.iter().enumerate() {
                ids[b * max + j] = t.id(codebook_size);
            }
        }
        Ok(TokenBatch {
            ids: Tensor::from_vec(ids, (states.len(), max), &Device::Cpu)?,
            lengths: states.iter().map(|s| s.len()).collect(),
        })
    }

    pub fn max_len(&self) -> usize {
        self.ids.dim(1).unwrap_or(0)
    }
}

/// Fused per-position features `e`, signal position first: `(L + 1) x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionFeature {
    pub values: Vec<f32>,
    pub width: usize,
}

impl FusionFeature {
    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub struct PredictorModel {
    pub config: PredictorConfig,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub quantizer_layers: usize,
    pub max_tokens: usize,
    params: ParamStore,
    text: TextEncoder,
    signal_proj: Linear,
    token_embed: Embedding,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    mu_head: AttnHead,
    log_var_head: AttnHead,
    code_head: CodeHead,
    residual: Option<ResidualHead>,
    codebook0: Tensor,
    positions: Tensor,
    use_positions: bool,
}

impl PredictorModel {
    /// `codebooks[v]` is the `K x d_c` table of quantizer layer `v`.
    pub fn new(config: PredictorConfig, codebooks: &[Vec<f32>], code_dim: usize, max_tokens: usize) -> Result<Self> {
        config.validate()?;
        let quantizer_layers = codebooks.len();
        if quantizer_layers == 0 {
            return Err(Error::Argument("predictor needs at least one codebook".into()));
        }
        let k = codebooks[0].len() / code_dim;
        let mut ps = ParamStore::new(crate::rng::labeled_seed(config.seed, "predictor-init"));
        let w = config.width;
        let text = TextEncoder::new(&mut ps, config.signal_dim)?;
        let signal_proj = Linear::new(&mut ps, "fusion.signal", config.signal_dim, w)?;
        let token_embed = Embedding::new(&mut ps, "fusion.tokens", k + SPECIAL_TOKENS, w)?;
        let blocks = (0..config.layers)
            .map(|i| TransformerBlock::new(&mut ps, &format!("fusion.block{i}"), w, config.heads))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut ps, "fusion.ln", w)?;
        let mu_head = AttnHead::new(&mut ps, "sampler.mu", w, config.heads, config.latent_dim, false)?;
        let log_var_head = AttnHead::new(&mut ps, "sampler.logvar", w, config.heads, config.latent_dim, true)?;
        let code_head = CodeHead::new(&mut ps, &config, code_dim)?;
        let residual = if quantizer_layers > 1 {
            let v = quantizer_layers;
            Some(ResidualHead {
                signal_proj: Linear::new(&mut ps, "residual.signal", config.signal_dim, w)?,
                code_embed: (0..v - 1)
                    .map(|u| Embedding::new(&mut ps, &format!("residual.codes{u}"), k, w))
                    .collect::<Result<_>>()?,
                layer_embed: Embedding::new(&mut ps, "residual.layer", v, w)?,
                blocks: (0..config.residual_layers.max(1))
                    .map(|i| TransformerBlock::new(&mut ps, &format!("residual.block{i}"), w, config.heads))
                    .collect::<Result<_>>()?,
                ln: LayerNorm::new(&mut ps, "residual.ln", w)?,
                out: Linear::new(&mut ps, "residual.out", w, k)?,
            })
        } else {
            None
        };
        let codebook0 = Tensor::from_vec(codebooks[0].clone(), (k, code_dim), &Device::Cpu)?;
        Ok(PredictorModel {
            positions: sinusoidal_positions(max_tokens + 1, w)?,
            config,
            codebook_size: k,
            code_dim,
            quantizer_layers,
            max_tokens,
            params: ps,
            text,
            signal_proj,
            token_embed,
            blocks,
            ln_f,
            mu_head,
            log_var_head,
            code_head,
            residual,
            codebook0,
            use_positions: true,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Disable positional encodings (used to test permutation equivariance).
    pub fn set_positional_encoding(&mut self, on: bool) {
        self.use_positions = on;
    }

    pub fn encode_text_batch(&self, captions: &[&CaptionTokens]) -> Result<Tensor> {
        self.text.forward(captions)
    }

    pub fn embed_text(&self, caption: &CaptionTokens) -> Result<SignalFeature> {
        Ok(SignalFeature {
            vector: to_vec(&self.encode_text_batch(&[caption])?)?,
            kind: SignalKind::Text,
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.max_tokens {
            return Err(Error::Argument(format!("{len} tokens exceed model limit {}", self.max_tokens)));
        }
        Ok(())
    }

    fn positions_for(&self, len: usize) -> Result<Option<Tensor>> {
        Ok(if self.use_positions {
            Some(self.positions.narrow(0, 0, len)?.unsqueeze(0)?)
        } else {
            None
        })
    }

    /// Signal prepended to token embeddings, through the transformer stack.
    /// Returns `(e, key_bias)` with `e: (B, L + 1, W)`.
    pub fn fuse_batch(&self, signals: &Tensor, tokens: &TokenBatch) -> Result<(Tensor, Tensor)> {
        let l = tokens.max_len();
        self.check_len(l)?;
        let s = self.signal_proj.forward(signals)?.unsqueeze(1)?;
        let t = self.token_embed.forward(&tokens.ids)?;
        let mut x = Tensor::cat(&[s, t], 1)?;
        if let Some(p) = self.positions_for(l + 1)? {
            x = x.broadcast_add(&p)?;
        }
        let lens: Vec<usize> = tokens.lengths.iter().map(|n| n + 1).collect();
        let bias = key_padding_bias(&lens, l + 1)?;
        for b in &self.blocks {
            x = b.forward(&x, Some(&bias))?;
        }
        Ok((self.ln_f.forward(&x)?, bias))
    }

    /// Mean and clamped log-variance at the token positions: `(B, L, D_z)` each.
    pub fn gaussian_batch(&self, e: &Tensor, bias: &Tensor) -> Result<(Tensor, Tensor)> {
        let l = e.dim(1)? - 1;
        let mu = self.mu_head.forward(e, bias)?.narrow(1, 1, l)?;
        let lv = self
            .log_var_head
            .forward(e, bias)?
            .narrow(1, 1, l)?
            .clamp(LOG_VAR_RANGE.0, LOG_VAR_RANGE.1)?;
        Ok((mu, lv))
    }

    /// `(B, L, D_z)` latents -> `(B, L, K)` log-probabilities scored against codebook 0.
    pub fn code_logits_batch(&self, z: &Tensor) -> Result<Tensor> {
        let (b, l, _) = z.dims3()?;
        let h = self.code_head.forward(z)?;
        let logits = h
            .reshape((b * l, self.code_dim))?
            .matmul(&self.codebook0.t()?)?
            .reshape((b, l, self.codebook_size))?;
        log_softmax(&logits)
    }

    /// One forward pass. With `variational`, `eps` (`(B, L, D_z)`) drives the
    /// reparameterised sample; without it the mean is used directly.
    pub fn forward_batch(
        &self,
        signals: &Tensor,
        tokens: &TokenBatch,
        eps: Option<&Tensor>,
        variational: bool,
    ) -> Result<BatchOutput> {
        let (e, bias) = self.fuse_batch(signals, tokens)?;
        let (mu, lv) = self.gaussian_batch(&e, &bias)?;
        if variational {
            let eps = eps.ok_or_else(|| Error::Argument("variational forward needs eps".into()))?;
            let z = reparameterize(&mu, &lv, eps)?;
            Ok(BatchOutput {
                log_probs: self.code_logits_batch(&z)?,
                gaussian: Some((mu, lv)),
            })
        } else {
            Ok(BatchOutput {
                log_probs: self.code_logits_batch(&mu)?,
                gaussian: None,
            })
        }
    }

    /// Residual-layer log-probabilities. `codes` is `(B, L, V+1)` u32 (only
    /// layers below each row's target are read); `target_layers[b] >= 1`.
    pub fn residual_batch(
        &self,
        signals: &Tensor,
        codes: &Tensor,
        lengths: &[usize],
        target_layers: &[usize],
    ) -> Result<Tensor> {
        let head = self
            .residual
            .as_ref()
            .ok_or_else(|| Error::Argument("model has a single quantizer layer".into()))?;
        if let Some(&v) = target_layers.iter().find(|&&v| v == 0 || v >= self.quantizer_layers) {
            return Err(Error::Argument(format!(
                "residual layer id {v} outside 1..{}",
                self.quantizer_layers
            )));
        }
        let (b, l, _) = codes.dims3()?;
        self.check_len(l)?;
        let mut x = Tensor::zeros((b, l, self.config.width), DType::F32, &Device::Cpu)?;
        for (u, embed) in head.code_embed.iter().enumerate() {
            let gate: Vec<f32> = target_layers.iter().map(|&v| if u < v { 1.0 } else { 0.0 }).collect();
            if gate.iter().all(|&g| g == 0.0) {
                continue;
            }
            let gate = Tensor::from_vec(gate, (b, 1, 1), &Device::Cpu)?;
            let ids = codes.narrow(2, u, 1)?.squeeze(2)?.contiguous()?;
            x = (x + embed.forward(&ids)?.broadcast_mul(&gate)?)?;
        }
        let layer_ids = Tensor::from_vec(
            target_layers.iter().map(|&v| v as u32).collect::<Vec<_>>(),
            b,
            &Device::Cpu,
        )?;
        x = x.broadcast_add(&head.layer_embed.forward(&layer_ids)?.unsqueeze(1)?)?;
        let s = head.signal_proj.forward(signals)?.unsqueeze(1)?;
        let mut x = Tensor::cat(&[s, x], 1)?;
        if let Some(p) = self.positions_for(l + 1)? {
            x = x.broadcast_add(&p)?;
        }
        let lens: Vec<usize> = lengths.iter().map(|n| n + 1).collect();
        let bias = key_padding_bias(&lens, l + 1)?;
        for blk in &head.blocks {
            x = blk.forward(&x, Some(&bias))?;
        }
        let h = head.ln.forward(&x)?.narrow(1, 1, l)?;
        log_softmax(&head.out.forward(&h)?)
    }

    // ---- single-item API --------------------------------------------------

    pub fn fuse_tokens(&self, signal: &SignalFeature, state: &TokenState) -> Result<FusionFeature> {
        let (e, _) = self.fuse_batch(&signal_tensor(&[signal])?, &TokenBatch::new(&[state], self.codebook_size)?)?;
        Ok(FusionFeature {
            values: to_vec(&e)?,
            width: self.config.width,
        })
    }

    /// Sample `z` from the Gaussian predicted for fused features `e`.
    pub fn latent_sample(&self, e: &FusionFeature, rng: &mut Rng) -> Result<(Vec<f32>, LatentGaussian)> {
        let len = e.len();
        let et = Tensor::from_vec(e.values.clone(), (1, len, e.width), &Device::Cpu)?;
        let bias = key_padding_bias(&[len], len)?;
        let (mu, lv) = self.gaussian_batch(&et, &bias)?;
        let eps = sample_eps(rng, (1, len - 1, self.config.latent_dim))?;
        let z = reparameterize(&mu, &lv, &eps)?;
        Ok((
            to_vec(&z)?,
            LatentGaussian {
                mu: to_vec(&mu)?,
                log_var: to_vec(&lv)?,
                dim: self.config.latent_dim,
            },
        ))
    }

    pub fn code_logits(&self, z: &[f32]) -> Result<CodeDistribution> {
        let len = z.len() / self.config.latent_dim;
        let zt = Tensor::from_vec(z.to_vec(), (1, len, self.config.latent_dim), &Device::Cpu)?;
        Ok(CodeDistribution {
            log_probs: to_vec(&self.code_logits_batch(&zt)?)?,
            codebook_size: self.codebook_size,
        })
    }

    pub fn forward(
        &self,
        signal: &SignalFeature,
        state: &TokenState,
        rng: &mut Rng,
        variational: bool,
    ) -> Result<(CodeDistribution, Option<LatentGaussian>)> {
        let batch = TokenBatch::new(&[state], self.codebook_size)?;
        let eps = if variational {
            Some(sample_eps(rng, (1, state.len(), self.config.latent_dim))?)
        } else {
            None
        };
        let out = self.forward_batch(&signal_tensor(&[signal])?, &batch, eps.as_ref(), variational)?;
        let dist = CodeDistribution {
            log_probs: to_vec(&out.log_probs)?,
            codebook_size: self.codebook_size,
        };
        let gaussian = match out.gaussian {
            Some((mu, lv)) => Some(LatentGaussian {
                mu: to_vec(&mu)?,
                log_var: to_vec(&lv)?,
                dim: self.config.latent_dim,
            }),
            None => None,
        };
        Ok((dist, gaussian))
    }

    /// Distribution over layer `layer` given the completed layers below it.
    pub fn predict_residual_layer(
        &self,
        signal: &SignalFeature,
        completed: &CodeSequence,
        layer: usize,
    ) -> Result<CodeDistribution> {
        if layer == 0 {
            return Err(Error::Argument("layer 0 is predicted by the masked path".into()));
        }
        if completed.num_layers() < layer {
            return Err(Error::Argument(format!(
                "layer {layer} needs {layer} completed layers, got {}",
                completed.num_layers()
            )));
        }
        let len = completed.len();
        let width = self.quantizer_layers;
        let mut ids = vec![0u32; len * width];
        for (t, row) in completed.indices.iter().enumerate() {
            for (u, &c) in row.iter().enumerate().take(layer) {
                ids[t * width + u] = c as u32;
            }
        }
        let codes = Tensor::from_vec(ids, (1, len, width), &Device::Cpu)?;
        let lp = self.residual_batch(&signal_tensor(&[signal])?, &codes, &[len], &[layer])?;
        Ok(CodeDistribution {
            log_probs: to_vec(&lp)?,
            codebook_size: self.codebook_size,
        })
    }
}

/// `z = mu + exp(log_var / 2) * eps`.
pub fn reparameterize(mu: &Tensor, log_var: &Tensor, eps: &Tensor) -> Result<Tensor> {
    Ok((mu + (log_var * 0.5)?.exp()?.mul(eps)?)?)
}

pub fn sample_eps(rng: &mut Rng, shape: (usize, usize, usize)) -> Result<Tensor> {
    let n = shape.0 * shape.1 * shape.2;
    let data: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

pub fn signal_tensor(signals: &[&SignalFeature]) -> Result<Tensor> {
    let dim = signals.first().map_or(0, |s| s.vector.len());
    let data: Vec<f32> = signals.iter().flat_map(|s| s.vector.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (signals.len(), dim), &Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::sample_noise_signal;
    use candle_core::Var;

    pub(crate) fn tiny(layers: usize) -> PredictorModel {
        let cfg = PredictorConfig {
            layers: 2,
            heads: 2,
            width: 16,
            signal_dim: 8,
            latent_dim: 4,
            residual_layers: 1,
            ..Default::default()
        };
        let books: Vec<Vec<f32>> = (0..layers)
            .map(|v| (0..8 * 6).map(|i| ((i * 31 + v * 7) % 11) as f32 / 5.0 - 1.0).collect())
            .collect();
        PredictorModel::new(cfg, &books, 6, 16).unwrap()
    }

    fn state(codes: &[Option<u32>]) -> TokenState {
        TokenState {
            tokens: codes.iter().map(|c| c.map_or(Token::Mask, Token::Code)).collect(),
        }
    }

    #[test]
    fn fusion_shape_and_determinism() {
        let m = tiny(3);
        let g = sample_noise_signal(1, 8);
        let s = state(&[Some(1), None, Some(3), None]);
        let e = m.fuse_tokens(&g, &s).unwrap();
        assert_eq!(e.len(), 5);
        assert_eq!(e, m.fuse_tokens(&g, &s).unwrap());
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut m = tiny(1);
        m.set_positional_encoding(false);
        let g = sample_noise_signal(2, 8);
        let a = m.fuse_tokens(&g, &state(&[Some(1), None, Some(5), None])).unwrap();
        let b = m.fuse_tokens(&g, &state(&[Some(5), None, Some(1), None])).unwrap();
        let w = a.width;
        let row = |f: &FusionFeature, i: usize| f.values[i * w..(i + 1) * w].to_vec();
        for (i, j) in [(0, 0), (1, 3), (3, 1), (2, 2), (4, 4)] {
            for (x, y) in row(&a, i).iter().zip(row(&b, j)) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        // the two MASK positions hold identical outputs
        for (x, y) in row(&a, 2).iter().zip(row(&a, 4)) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn distributions_are_normalised_in_both_modes() {
        let m = tiny(3);
        let g = sample_noise_signal(3, 8);
        let s = TokenState::empty(6);
        let mut rng = crate::rng::rng_from(0);
        for variational in [false, true] {
            let (d, gauss) = m.forward(&g, &s, &mut rng, variational).unwrap();
            assert_eq!(d.len(), 6);
            assert_eq!(d.codebook_size, 8);
            assert!(d.row_log_sum_exp().iter().all(|v| v.abs() < 1e-5));
            assert_eq!(gauss.is_some(), variational);
        }
        let (a, _) = m.forward(&g, &s, &mut rng, false).unwrap();
        let (b, _) = m.forward(&g, &s, &mut rng, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_codebook_rows_score_equally() {
        let cfg = PredictorConfig {
            layers: 1,
            heads: 2,
            width: 16,
            signal_dim: 8,
            latent_dim: 4,
            ..Default::default()
        };
        let mut book: Vec<f32> = (0..8 * 6).map(|i| (i as f32 * 0.37).sin()).collect();
        let row2 = book[12..18].to_vec();
        book[30..36].copy_from_slice(&row2);
        let m = PredictorModel::new(cfg, &[book], 6, 16).unwrap();
        let d = m.code_logits(&[0.3, -0.2, 0.9, 1.1, 0.0, 0.5, -0.5, 0.25]).unwrap();
        for t in 0..2 {
            assert_eq!(d.row(t)[2], d.row(t)[5]);
        }
    }

    #[test]
    fn reparameterization_arithmetic() {
        let dev = Device::Cpu;
        let mu = Tensor::new(&[2.0f32], &dev).unwrap();
        let lv = Tensor::new(&[9f32.ln()], &dev).unwrap();
        let eps = Tensor::new(&[1.0f32], &dev).unwrap();
        let z = reparameterize(&mu, &lv, &eps).unwrap().to_vec1::<f32>().unwrap()[0];
        assert!((z - 5.0).abs() < 1e-5);
        // vanishing sigma at the clamp floor
        let lv = Tensor::new(&[-10.0f32], &dev).unwrap();
        for e in [-3.0f32, 0.5, 3.0] {
            let z = reparameterize(&mu, &lv, &Tensor::new(&[e], &dev).unwrap()).unwrap().to_vec1::<f32>().unwrap()[0];
            assert!((z - 2.0).abs() <= 1e-2 * 2.0 + 1e-3);
        }
    }

    #[test]
    fn reparameterization_gradients_match_common_random_numbers() {
        use rand::Rng as _;
        let dev = Device::Cpu;
        let mut rng = crate::rng::rng_from(12);
        for case in 0..20 {
            let mu0: f64 = rng.random_range(-2.0..2.0);
            let sigma0: f64 = rng.random_range(0.2..2.0);
            let lv0 = (sigma0 * sigma0).ln();
            let eps: Vec<f64> = (0..256).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mu = Var::new(&[mu0], &dev).unwrap();
            let lv = Var::new(&[lv0], &dev).unwrap();
            let et = Tensor::from_vec(eps.clone(), 256, &dev).unwrap();
            let z = reparameterize(&mu.as_tensor().broadcast_as(256).unwrap(), &lv.as_tensor().broadcast_as(256).unwrap(), &et).unwrap();
            let f = z.sqr().unwrap().mean_all().unwrap();
            let grads = f.backward().unwrap();
            let g_mu = grads.get(mu.as_tensor()).unwrap().to_vec1::<f64>().unwrap()[0];
            let g_lv = grads.get(lv.as_tensor()).unwrap().to_vec1::<f64>().unwrap()[0];
            let objective = |m: f64, l: f64| eps.iter().map(|e| (m + (l / 2.0).exp() * e).powi(2)).sum::<f64>() / 256.0;
            let h = 1e-5;
            let fd_mu = (objective(mu0 + h, lv0) - objective(mu0 - h, lv0)) / (2.0 * h);
            let fd_lv = (objective(mu0, lv0 + h) - objective(mu0, lv0 - h)) / (2.0 * h);
            assert!((g_mu - fd_mu).abs() <= 1e-3 * fd_mu.abs().max(1e-3), "case {case}: {g_mu} vs {fd_mu}");
            assert!((g_lv - fd_lv).abs() <= 1e-3 * fd_lv.abs().max(1e-3), "case {case}: {g_lv} vs {fd_lv}");
        }
    }

    #[test]
    fn expected_square_gradient_is_two_mu() {
        // d/dmu E[z^2] = 2 mu at mu = 1, sigma = 1
        let dev = Device::Cpu;
        let mut rng = crate::rng::rng_from(99);
        let n = 20_000;
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = |m: f64| eps.iter().map(|e| (m + e).powi(2)).sum::<f64>() / n as f64;
        let fd = (f(1.0 + 1e-4) - f(1.0 - 1e-4)) / 2e-4;
        assert!((fd - 2.0).abs() < 0.05, "{fd}");
        let mu = Var::new(&[1.0f64], &dev).unwrap();
        let z = reparameterize(
            &mu.as_tensor().broadcast_as(n).unwrap(),
            &Tensor::zeros(n, DType::F64, &dev).unwrap(),
            &Tensor::from_vec(eps, n, &dev).unwrap(),
        )
        .unwrap();
        let g = z.sqr().unwrap().mean_all().unwrap().backward().unwrap();
        let g = g.get(mu.as_tensor()).unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((g - fd).abs() < 1e-6);
    }

    #[test]
    fn residual_layer_contract() {
        let m = tiny(3);
        let g = sample_noise_signal(4, 8);
        let codes = CodeSequence::from_layers(&[vec![1, 2, 3, 4, 5], vec![0, 1, 0, 1, 0]]);
        let d = m.predict_residual_layer(&g, &codes, 1).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.row_log_sum_exp().iter().all(|v| v.abs() < 1e-5));
        assert_eq!(d, m.predict_residual_layer(&g, &codes, 1).unwrap());
        assert!(matches!(m.predict_residual_layer(&g, &codes, 0), Err(Error::Argument(_))));
        let d2 = m.predict_residual_layer(&g, &codes, 2).unwrap();
        assert_ne!(d, d2);
    }

    #[test]
    fn empty_caption_uses_generic() {
        let m = tiny(1);
        let empty = CaptionTokens {
            tokens: vec![],
            described: crate::syndata::DescribedMask::NONE,
        };
        assert_eq!(m.embed_text(&empty).unwrap(), m.embed_text(&generic_caption()).unwrap());
        let s = m.embed_text(&generic_caption()).unwrap();
        assert_eq!(s.vector.len(), sample_noise_signal(0, 8).vector.len());
        assert_eq!(s.kind, SignalKind::Text);
    }
}

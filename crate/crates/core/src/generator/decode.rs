use candle_core::{Device, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::guidance::guided_fuse_tensor;
use super::schedule::remaining_masked;
use crate::error::{Error, Result};
use crate::nn::to_vec;
use crate::predictor::model::{signal_tensor, TokenBatch};
use crate::predictor::{sample_noise_signal, PredictorCheckpoint, SignalFeature, Token, TokenState};
use crate::rng::{labeled_seed, rng_from, Rng};
use crate::rvq::{CodeSequence, MotionCodec};
use crate::syndata::{generic_caption, CaptionTokens, MotionSequence};

pub const DEFAULT_GUIDANCE: f64 = 3.0;
pub const DEFAULT_DECODE_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMode {
    Auto,
    Frames(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub caption: CaptionTokens,
    pub w: f64,
    pub length: LengthMode,
    pub decode_steps: usize,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(caption: CaptionTokens, seed: u64) -> Self {
        GenerationRequest {
            caption,
            w: DEFAULT_GUIDANCE,
            length: LengthMode::Auto,
            decode_steps: DEFAULT_DECODE_STEPS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decode_steps == 0 {
            return Err(Error::Argument("decode_steps must be at least 1".into()));
        }
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::Argument(format!("guidance weight {} must be finite and non-negative", self.w)));
        }
        self.caption.validate()
    }
}

/// Per-step record of one decoding run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub newly_fixed: usize,
    /// Mean fused probability of the codes fixed at this step.
    pub mean_confidence: f32,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub motion: MotionSequence,
    pub codes: CodeSequence,
    pub trace: Vec<StepTrace>,
}

/// Frozen codec and predictor, ready to generate.
pub struct Generator<'a> {
    pub codec: &'a MotionCodec,
    pub predictor: &'a PredictorCheckpoint,
    pub length_range: (usize, usize),
}

struct DecodeJob {
    text: SignalFeature,
    uncond: SignalFeature,
    state: TokenState,
    rng: Rng,
    trace: Vec<StepTrace>,
}

impl<'a> Generator<'a> {
    pub fn new(codec: &'a MotionCodec, predictor: &'a PredictorCheckpoint, length_range: (usize, usize)) -> Self {
        Generator {
            codec,
            predictor,
            length_range,
        }
    }

    /// Motion length in frames, rounded down to a multiple of the downsample rate.
    pub fn resolve_length(&self, caption: &CaptionTokens, mode: LengthMode, seed: u64) -> Result<usize> {
        let l = self.codec.downsample();
        match mode {
            LengthMode::Frames(n) => {
                let (lo, hi) = self.length_range;
                if n < lo || n > hi || n < l {
                    return Err(Error::Argument(format!("length {n} outside [{lo}, {hi}]")));
                }
                Ok(n / l * l)
            }
            LengthMode::Auto => {
                let mut rng = rng_from(labeled_seed(seed, "length"));
                Ok(self.predictor.length.sample(caption, &mut rng))
            }
        }
    }

    /// The unconditional branch for guidance: one noise draw per generation,
    /// or the generic caption for a predictor never trained on noise.
    fn unconditional_signal(&self, seed: u64) -> Result<SignalFeature> {
        let m = &self.predictor.model;
        if m.config.p_noise > 0.0 {
            Ok(sample_noise_signal(labeled_seed(seed, "noise"), m.config.signal_dim))
        } else {
            m.embed_text(&generic_caption())
        }
    }

    fn forward_logp(&self, signals: &[&SignalFeature], jobs: &mut [DecodeJob]) -> Result<Tensor> {
        let m = &self.predictor.model;
        let states: Vec<&TokenState> = jobs.iter().map(|j| &j.state).collect();
        let batch = TokenBatch::new(&states, m.codebook_size)?;
        let l = batch.max_len();
        let eps = if m.config.variational {
            let dz = m.config.latent_dim;
            let mut data = vec![0f32; jobs.len() * l * dz];
            for (b, job) in jobs.iter_mut().enumerate() {
                let n = job.state.len() * dz;
                let e = crate::predictor::model::sample_eps(&mut job.rng, (1, job.state.len(), dz))?;
                data[b * l * dz..b * l * dz + n].copy_from_slice(&to_vec(&e)?);
            }
            Some(Tensor::from_vec(data, (jobs.len(), l, dz), &Device::Cpu)?)
        } else {
            None
        };
        let out = m.forward_batch(&signal_tensor(signals)?, &batch, eps.as_ref(), m.config.variational)?;
        Ok(out.log_probs)
    }

    fn decode_batch(&self, jobs: &mut [DecodeJob], w: f64, steps: usize) -> Result<()> {
        let k = self.predictor.model.codebook_size;
        for step in 1..=steps {
            let text: Vec<SignalFeature> = jobs.iter().map(|j| j.text.clone()).collect();
            let text_refs: Vec<&SignalFeature> = text.iter().collect();
            let lp_text = self.forward_logp(&text_refs, jobs)?;
            let fused = if w == 0.0 {
                lp_text
            } else {
                let unc: Vec<SignalFeature> = jobs.iter().map(|j| j.uncond.clone()).collect();
                let unc_refs: Vec<&SignalFeature> = unc.iter().collect();
                let lp_unc = self.forward_logp(&unc_refs, jobs)?;
                guided_fuse_tensor(&lp_text, &lp_unc, w)?
            };
            let l = fused.dim(1)?;
            let flat = to_vec(&fused)?;
            for (b, job) in jobs.iter_mut().enumerate() {
                let total = job.state.len();
                let hidden: Vec<usize> = (0..total).filter(|&t| job.state.is_hidden(t)).collect();
                let keep_hidden = remaining_masked(total, step, steps).min(hidden.len());
                let mut picks: Vec<(usize, u32, f32)> = Vec::with_capacity(hidden.len());
                for &t in &hidden {
                    let row = &flat[(b * l + t) * k..(b * l + t + 1) * k];
                    let (code, p) = sample_row(row, &mut job.rng);
                    picks.push((t, code, p));
                }
                // highest confidence first; ties by position
                picks.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
                let n_fix = picks.len() - keep_hidden;
                let mut conf = 0f32;
                for (i, &(t, code, p)) in picks.iter().enumerate() {
                    if i < n_fix {
                        job.state.tokens[t] = Token::Code(code);
                        conf += p;
                    } else {
                        job.state.tokens[t] = Token::Mask;
                    }
                }
                job.trace.push(StepTrace {
                    step,
                    newly_fixed: n_fix,
                    mean_confidence: if n_fix > 0 { conf / n_fix as f32 } else { 0.0 },
                });
            }
        }
        Ok(())
    }

    /// Layer-0 codes for each request, decoded together. Each request owns
    /// its random stream, so results do not depend on batch composition.
    pub fn iterative_decode_batch(&self, requests: &[GenerationRequest], frames: &[usize]) -> Result<Vec<(CodeSequence, Vec<StepTrace>)>> {
        if requests.len() != frames.len() {
            return Err(Error::Argument("one resolved length per request is required".into()));
        }
        let l = self.codec.downsample();
        let max_tokens = self.predictor.model.max_tokens;
        let mut out: Vec<Option<(CodeSequence, Vec<StepTrace>)>> = vec![None; requests.len()];
        // decode requests sharing (w, steps) together
        let mut groups: Vec<((u64, usize), Vec<usize>)> = Vec::new();
        for (i, r) in requests.iter().enumerate() {
            r.validate()?;
            let tokens = frames[i] / l;
            if tokens == 0 || tokens > max_tokens {
                return Err(Error::Argument(format!("resolved length {} frames is not decodable", frames[i])));
            }
            let key = (r.w.to_bits(), r.decode_steps);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, g)) => g.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        for ((wbits, steps), idx) in groups {
            let mut jobs = idx
                .iter()
                .map(|&i| {
                    let r = &requests[i];
                    Ok(DecodeJob {
                        text: self.predictor.model.embed_text(&r.caption)?,
                        uncond: self.unconditional_signal(r.seed)?,
                        state: TokenState::empty(frames[i] / l),
                        rng: rng_from(labeled_seed(r.seed, "decode")),
                        trace: Vec::new(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            self.decode_batch(&mut jobs, f64::from_bits(wbits), steps)?;
            for (job, &i) in jobs.into_iter().zip(&idx) {
                let codes = job
                    .state
                    .tokens
                    .iter()
                    .map(|t| match t {
                        Token::Code(c) => Ok(vec![*c as usize]),
                        _ => Err(Error::Argument("decoding left a position unresolved".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                out[i] = Some((CodeSequence { indices: codes }, job.trace));
            }
        }
        Ok(out.into_iter().map(|o| o.expect("decoded")).collect())
    }

    pub fn iterative_decode(&self, request: &GenerationRequest, frames: usize) -> Result<CodeSequence> {
        Ok(self.iterative_decode_batch(std::slice::from_ref(request), &[frames])?.remove(0).0)
    }

    /// Fill residual layers greedily, one layer at a time.
    pub fn complete_residual_layers_batch(&self, captions: &[&CaptionTokens], layer0: &[CodeSequence]) -> Result<Vec<CodeSequence>> {
        let m = &self.predictor.model;
        let v = m.quantizer_layers;
        let mut seqs: Vec<CodeSequence> = layer0
            .iter()
            .map(|c| CodeSequence {
                indices: c.indices.iter().map(|row| vec![row[0]]).collect(),
            })
            .collect();
        if v == 1 || seqs.is_empty() {
            return Ok(seqs);
        }
        let signals = m.encode_text_batch(captions)?;
        let b = seqs.len();
        let lmax = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let k = m.codebook_size;
        for layer in 1..v {
            let mut ids = vec![0u32; b * lmax * v];
            for (i, s) in seqs.iter().enumerate() {
                for (t, row) in s.indices.iter().enumerate() {
                    for (u, &c) in row.iter().enumerate() {
                        ids[(i * lmax + t) * v + u] = c as u32;
                    }
                }
            }
            let codes = Tensor::from_vec(ids, (b, lmax, v), &Device::Cpu)?;
            let lp = to_vec(&m.residual_batch(&signals, &codes, &lengths, &vec![layer; b])?)?;
            for (i, s) in seqs.iter_mut().enumerate() {
                for t in 0..s.len() {
                    let row = &lp[(i * lmax + t) * k..(i * lmax + t + 1) * k];
                    s.indices[t].push(argmax(row));
                }
            }
        }
        Ok(seqs)
    }

    pub fn complete_residual_layers(&self, caption: &CaptionTokens, layer0: &CodeSequence) -> Result<CodeSequence> {
        Ok(self.complete_residual_layers_batch(&[caption], std::slice::from_ref(layer0))?.remove(0))
    }

    pub fn generate_batch(&self, requests: &[GenerationRequest]) -> Result<Vec<GenerationResult>> {
        let frames = requests
            .iter()
            .map(|r| self.resolve_length(&r.caption, r.length, r.seed))
            .collect::<Result<Vec<_>>>()?;
        let decoded = self.iterative_decode_batch(requests, &frames)?;
        let (layer0, traces): (Vec<CodeSequence>, Vec<Vec<StepTrace>>) = decoded.into_iter().unzip();
        let captions: Vec<&CaptionTokens> = requests.iter().map(|r| &r.caption).collect();
        let codes = self.complete_residual_layers_batch(&captions, &layer0)?;
        let latents = codes.iter().map(|c| self.codec.dequantize(c)).collect::<Result<Vec<_>>>()?;
        let motions = self.codec.decode_many(&latents.iter().collect::<Vec<_>>())?;
        Ok(motions
            .into_iter()
            .zip(codes)
            .zip(traces)
            .map(|((motion, codes), trace)| GenerationResult { motion, codes, trace })
            .collect())
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        Ok(self.generate_batch(std::slice::from_ref(request))?.remove(0))
    }
}

/// Sample one code from a log-probability row at temperature 1; returns the
/// code and its probability.
fn sample_row(row: &[f32], rng: &mut Rng) -> (u32, f32) {
    let u: f64 = rng.random();
    let mut acc = 0f64;
    let mut last = 0;
    for (k, &lp) in row.iter().enumerate() {
        let p = (lp as f64).exp();
        if p > 0.0 {
            last = k;
        }
        acc += p;
        if u < acc {
            return (k as u32, p as f32);
        }
    }
    (last as u32, row[last].exp())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

//! Categorical length model: softmax regression from a caption's bag of words
//! to a token count (motion length in units of the downsample rate).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::NamedArray;
use crate::rng::Rng;
use crate::syndata::caption::{generic_caption, VOCAB_SIZE};
use crate::syndata::CaptionTokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBuckets {
    /// Smallest token count (inclusive).
    pub min_tokens: usize,
    /// Largest token count (inclusive).
    pub max_tokens: usize,
    pub downsample: usize,
}

impl LengthBuckets {
    /// Token counts whose frame lengths lie inside `range`.
    pub fn for_range(range: (usize, usize), downsample: usize) -> Result<Self> {
        let min_tokens = range.0.div_ceil(downsample).max(1);
        let max_tokens = range.1 / downsample;
        if max_tokens < min_tokens {
            return Err(Error::Argument(format!(
                "length range {range:?} holds no multiple of {downsample}"
            )));
        }
        Ok(LengthBuckets {
            min_tokens,
            max_tokens,
            downsample,
        })
    }

    pub fn count(&self) -> usize {
        self.max_tokens - self.min_tokens + 1
    }

    fn bucket_of(&self, frames: usize) -> usize {
        (frames / self.downsample).clamp(self.min_tokens, self.max_tokens) - self.min_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthPredictor {
    pub buckets: LengthBuckets,
    /// `(VOCAB_SIZE + 1) x buckets`, last row is the bias.
    weights: Vec<f64>,
}

fn features(caption: &CaptionTokens) -> Vec<f64> {
    let generic = generic_caption();
    let c = if caption.is_empty() { &generic } else { caption };
    let mut f = vec![0.0; VOCAB_SIZE + 1];
    for &t in &c.tokens {
        f[t as usize] += 1.0;
    }
    f[VOCAB_SIZE] = 1.0;
    f
}

impl LengthPredictor {
    pub fn untrained(buckets: LengthBuckets) -> Self {
        LengthPredictor {
            buckets,
            weights: vec![0.0; (VOCAB_SIZE + 1) * buckets.count()],
        }
    }

    /// Full-batch gradient descent on the mean cross-entropy.
    pub fn fit(buckets: LengthBuckets, pairs: &[(&CaptionTokens, usize)], iterations: usize, lr: f64) -> Self {
        let mut model = Self::untrained(buckets);
        if pairs.is_empty() {
            return model;
        }
        let nb = buckets.count();
        let data: Vec<(Vec<f64>, usize)> = pairs.iter().map(|(c, len)| (features(c), buckets.bucket_of(*len))).collect();
        let mut grad = vec![0.0; model.weights.len()];
        for _ in 0..iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (f, target) in &data {
                let p = model.probs_of(f);
                for (i, &x) in f.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for b in 0..nb {
                        let y = if b == *target { 1.0 } else { 0.0 };
                        grad[i * nb + b] += x * (p[b] - y);
                    }
                }
            }
            let scale = lr / data.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= scale * g;
            }
        }
        model
    }

    fn probs_of(&self, f: &[f64]) -> Vec<f64> {
        let nb = self.buckets.count();
        let mut logits = vec![0.0; nb];
        for (i, &x) in f.iter().enumerate() {
            if x != 0.0 {
                for b in 0..nb {
                    logits[b] += x * self.weights[i * nb + b];
                }
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    /// Probability of each token count, from `min_tokens` upwards.
    pub fn probabilities(&self, caption: &CaptionTokens) -> Vec<f64> {
        self.probs_of(&features(caption))
    }

    /// Sample a length in frames.
    pub fn sample(&self, caption: &CaptionTokens, rng: &mut Rng) -> usize {
        let p = self.probabilities(caption);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = p.len() - 1;
        for (b, q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                pick = b;
                break;
            }
        }
        (self.buckets.min_tokens + pick) * self.buckets.downsample
    }

    pub fn to_array(&self) -> NamedArray {
        NamedArray::new(
            "length.weights",
            vec![VOCAB_SIZE + 1, self.buckets.count()],
            self.weights.iter().map(|&w| w as f32).collect(),
        )
    }

    pub fn from_array(buckets: LengthBuckets, a: &NamedArray) -> Result<Self> {
        if a.shape != [VOCAB_SIZE + 1, buckets.count()] {
            return Err(Error::Argument(format!("length weights have shape {:?}", a.shape)));
        }
        Ok(LengthPredictor {
            buckets,
            weights: a.data.iter().map(|&w| w as f64).collect(),
        })
    }
}

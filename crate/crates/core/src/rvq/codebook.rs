//! Learnable codebooks: EMA statistics, dead-code reset, k-means++ seeding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::quantize::{quantize_nearest, squared_distance, CodeTable};
use crate::error::{Error, Result};
use crate::nn::NamedArray;
use crate::rng::Rng;

pub const EMA_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResetPolicy {
    /// A code is "dead" while its EMA cluster size is below this.
    pub threshold: f32,
    /// Consecutive dead steps before the code is replaced.
    pub window: u32,
}

impl Default for ResetPolicy {
    fn default() -> Self {
        ResetPolicy {
            threshold: 1.0,
            window: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookLayer {
    pub size: usize,
    pub dim: usize,
    pub codes: Vec<f32>,
    pub ema_size: Vec<f32>,
    pub ema_sum: Vec<f32>,
    pub usage: Vec<u64>,
    pub dead_streak: Vec<u32>,
    /// Code 0 is held at the zero vector and never updated, so a residual
    /// layer can always decline to move the reconstruction.
    pub zero_anchor: bool,
}

impl CodebookLayer {
    pub fn new(size: usize, dim: usize, zero_anchor: bool) -> Result<Self> {
        if size < 2 {
            return Err(Error::Argument(format!("codebook size {size} below 2")));
        }
        Ok(CodebookLayer {
            size,
            dim,
            codes: vec![0.0; size * dim],
            ema_size: vec![1.0; size],
            ema_sum: vec![0.0; size * dim],
            usage: vec![0; size],
            dead_streak: vec![0; size],
            zero_anchor,
        })
    }

    pub fn table(&self) -> CodeTable<'_> {
        CodeTable::new(&self.codes, self.dim)
    }

    pub fn code(&self, k: usize) -> &[f32] {
        &self.codes[k * self.dim..(k + 1) * self.dim]
    }

    fn first_trainable(&self) -> usize {
        usize::from(self.zero_anchor)
    }

    /// k-means++ seeding followed by a few Lloyd iterations over `data`
    /// (`n x dim`). EMA sums are set so the codes are a fixed point.
    pub fn init_kmeans(&mut self, data: &[f32], rng: &mut Rng, lloyd_iters: usize) -> Result<()> {
        let n = data.len() / self.dim;
        if n == 0 {
            return Err(Error::Argument("k-means init needs data".into()));
        }
        let dim = self.dim;
        let point = |i: usize| &data[i * dim..(i + 1) * dim];
        let start = self.first_trainable();
        let mut chosen: Vec<usize> = Vec::new();
        let mut dist: Vec<f32> = if self.zero_anchor {
            (0..n).map(|i| point(i).iter().map(|v| v * v).sum()).collect()
        } else {
            vec![f32::INFINITY; n]
        };
        for k in start..self.size {
            let pick = if chosen.is_empty() && !self.zero_anchor {
                rng.random_range(0..n)
            } else {
                let total: f64 = dist.iter().map(|&d| d as f64).sum();
                if total <= 0.0 {
                    rng.random_range(0..n)
                } else {
                    let mut target = rng.random::<f64>() * total;
                    let mut pick = n - 1;
                    for (i, &d) in dist.iter().enumerate() {
                        target -= d as f64;
                        if target <= 0.0 {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            chosen.push(pick);
            self.codes[k * dim..(k + 1) * dim].copy_from_slice(point(pick));
            for (i, d) in dist.iter_mut().enumerate() {
                *d = d.min(squared_distance(point(i), point(pick)));
            }
        }
        for _ in 0..lloyd_iters {
            let mut sums = vec![0f64; self.size * dim];
            let mut counts = vec![0usize; self.size];
            for i in 0..n {
                let (k, _) = quantize_nearest(point(i), self.table());
                counts[k] += 1;
                for (s, v) in sums[k * dim..(k + 1) * dim].iter_mut().zip(point(i)) {
                    *s += *v as f64;
                }
            }
            for k in start..self.size {
                if counts[k] > 0 {
                    for d in 0..dim {
                        self.codes[k * dim + d] = (sums[k * dim + d] / counts[k] as f64) as f32;
                    }
                }
            }
        }
        for k in 0..self.size {
            self.ema_size[k] = 1.0;
            for d in 0..dim {
                self.ema_sum[k * dim + d] = self.codes[k * dim + d] * (1.0 + EMA_EPSILON);
            }
        }
        Ok(())
    }

    /// Exponential-moving-average update from one batch of `vectors`
    /// (`n x dim`) and their code assignments:
    /// `N_k <- decay N_k + (1-decay) count_k`, `m_k <- decay m_k + (1-decay) sum_k`,
    /// `c_k <- m_k / (N_k + eps)`.
    pub fn ema_update(&mut self, vectors: &[f32], assignments: &[usize], decay: f32) -> Result<()> {
        let dim = self.dim;
        if vectors.len() != assignments.len() * dim {
            return Err(Error::Argument("vectors and assignments disagree in count".into()));
        }
        let mut counts = vec![0f32; self.size];
        let mut sums = vec![0f32; self.size * dim];
        for (i, &k) in assignments.iter().enumerate() {
            if k >= self.size {
                return Err(Error::Argument(format!("assignment {k} >= codebook size {}", self.size)));
            }
            counts[k] += 1.0;
            self.usage[k] += 1;
            for (s, v) in sums[k * dim..(k + 1) * dim].iter_mut().zip(&vectors[i * dim..(i + 1) * dim]) {
                *s += v;
            }
        }
        for k in self.first_trainable()..self.size {
            self.ema_size[k] = decay * self.ema_size[k] + (1.0 - decay) * counts[k];
            let denom = self.ema_size[k] + EMA_EPSILON;
            for d in 0..dim {
                let i = k * dim + d;
                self.ema_sum[i] = decay * self.ema_sum[i] + (1.0 - decay) * sums[i];
                self.codes[i] = self.ema_sum[i] / denom;
            }
        }
        Ok(())
    }

    /// Advance dead-code counters and replace codes dead for `policy.window`
    /// consecutive steps with random rows of `batch`. Returns the reset codes.
    pub fn codebook_reset(&mut self, batch: &[f32], policy: ResetPolicy, rng: &mut Rng) -> Vec<usize> {
        let dim = self.dim;
        let n = batch.len() / dim;
        let mut reset = Vec::new();
        for k in self.first_trainable()..self.size {
            if self.ema_size[k] < policy.threshold {
                self.dead_streak[k] += 1;
            } else {
                self.dead_streak[k] = 0;
            }
            if self.dead_streak[k] >= policy.window && n > 0 {
                let i = rng.random_range(0..n);
                let row = &batch[i * dim..(i + 1) * dim];
                self.codes[k * dim..(k + 1) * dim].copy_from_slice(row);
                self.ema_size[k] = policy.threshold;
                for d in 0..dim {
                    self.ema_sum[k * dim + d] = row[d] * (policy.threshold + EMA_EPSILON);
                }
                self.dead_streak[k] = 0;
                reset.push(k);
            }
        }
        reset
    }

    pub fn clear_usage(&mut self) {
        self.usage.iter_mut().for_each(|u| *u = 0);
    }
}

/// The `V+1` codebooks of a residual quantizer. Layer 0 is the base layer;
/// layers `1..` quantize residuals and carry a zero anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredCodebook {
    pub layers: Vec<CodebookLayer>,
}

impl LayeredCodebook {
    pub fn new(num_layers: usize, size: usize, dim: usize) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Argument("need at least one quantizer layer".into()));
        }
        let layers = (0..num_layers)
            .map(|v| CodebookLayer::new(size, dim, v > 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayeredCodebook { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn size(&self) -> usize {
        self.layers[0].size
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim
    }

    pub fn tables(&self) -> Vec<CodeTable<'_>> {
        self.layers.iter().map(|l| l.table()).collect()
    }

    /// Owned copy of every layer's code table.
    pub fn tables_flat(&self) -> Vec<Vec<f32>> {
        self.layers.iter().map(|l| l.codes.clone()).collect()
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        for (v, l) in self.layers.iter().enumerate() {
            let p = format!("codebook.layer{v}");
            out.push(NamedArray::new(format!("{p}.codes"), vec![l.size, l.dim], l.codes.clone()));
            out.push(NamedArray::new(format!("{p}.ema_size"), vec![l.size], l.ema_size.clone()));
            out.push(NamedArray::new(format!("{p}.ema_sum"), vec![l.size, l.dim], l.ema_sum.clone()));
            out.push(NamedArray::new(
                format!("{p}.usage"),
                vec![l.size],
                l.usage.iter().map(|&u| u as f32).collect(),
            ));
        }
        out
    }

    pub fn from_arrays(
        arrays: &mut crate::nn::checkpoint::LoadedCheckpoint<impl Sized>,
        num_layers: usize,
        size: usize,
        dim: usize,
    ) -> Result<Self> {
        let mut book = LayeredCodebook::new(num_layers, size, dim)?;
        for (v, l) in book.layers.iter_mut().enumerate() {
            let p = format!("codebook.layer{v}");
            let mut get = |suffix: &str, len: usize| -> Result<Vec<f32>> {
                let a = arrays.take(&format!("{p}.{suffix}"))?;
                if a.data.len() != len {
                    return Err(Error::Argument(format!("{p}.{suffix}: {} values, expected {len}", a.data.len())));
                }
                Ok(a.data)
            };
            l.codes = get("codes", size * dim)?;
            l.ema_size = get("ema_size", size)?;
            l.ema_sum = get("ema_sum", size * dim)?;
            l.usage = get("usage", size)?.into_iter().map(|u| u as u64).collect();
        }
        Ok(book)
    }
}

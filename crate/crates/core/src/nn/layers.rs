use candle_core::{Tensor, D};

use super::params::ParamStore;
use crate::error::Result;

#[derive(Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let weight = ps.normal(&format!("{name}.weight"), &[output, input], (1.0 / input as f32).sqrt())?;
        let bias = Some(ps.constant(&format!("{name}.bias"), &[output], 0.0)?);
        Ok(Linear { weight, bias })
    }

    pub fn new_no_bias(ps: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let weight = ps.normal(&format!("{name}.weight"), &[output, input], (1.0 / input as f32).sqrt())?;
        Ok(Linear { weight, bias: None })
    }

    /// Zero-initialised layer, for heads that should start neutral.
    pub fn zeros(ps: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let weight = ps.constant(&format!("{name}.weight"), &[output, input], 0.0)?;
        let bias = Some(ps.constant(&format!("{name}.bias"), &[output], 0.0)?);
        Ok(Linear { weight, bias })
    }

    /// Applies to the last axis; leading axes are flattened into one matmul.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let (last, lead) = dims.split_last().expect("linear input has at least one axis");
        let rows = lead.iter().product::<usize>();
        let y = x.reshape((rows, *last))?.matmul(&self.weight.t()?)?;
        let mut out = lead.to_vec();
        out.push(self.weight.dim(0)?);
        let y = y.reshape(out)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// 1-D convolution over `(batch, channels, time)`.
#[derive(Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let std = (1.0 / (input * kernel) as f32).sqrt();
        let weight = ps.normal(&format!("{name}.weight"), &[output, input, kernel], std)?;
        let bias = ps.constant(&format!("{name}.bias"), &[output], 0.0)?;
        Ok(Conv1d {
            weight,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    /// `(batch, channels, time)` in and out.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_btc(&x.transpose(1, 2)?.contiguous()?)?;
        Ok(y.transpose(1, 2)?.contiguous()?)
    }

    /// Same convolution on channels-last `(batch, time, channels)` input.
    ///
    /// Taps are gathered with `narrow` (the stride is folded into the channel
    /// axis first) and contracted in one flat matmul. The backend's own conv1d
    /// backward returns wrong weight gradients on CPU, so it is not used.
    pub fn forward_btc(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let (out, _, k) = self.weight.dims3()?;
        let span = self.dilation * (k - 1) + 1;
        let padded = t + 2 * self.padding;
        if padded < span {
            return Err(crate::error::Error::Argument(format!(
                "conv input of {t} frames shorter than kernel span {span}"
            )));
        }
        let s = self.stride;
        let t_out = (padded - span) / s + 1;
        let folded_len = padded.div_ceil(s) * s;
        let right = self.padding + folded_len - padded;
        let xp = if self.padding + right > 0 {
            x.pad_with_zeros(1, self.padding, right)?
        } else {
            x.clone()
        };
        let xf = xp.reshape((b, folded_len / s, s * c))?;
        let taps = (0..k)
            .map(|j| {
                let off = j * self.dilation;
                xf.narrow(1, off / s, t_out)?.narrow(2, (off % s) * c, c)
            })
            .collect::<candle_core::Result<Vec<_>>>()?;
        let cols = Tensor::cat(&taps, 2)?.reshape((b * t_out, k * c))?;
        // (out, c, k) -> (k * c, out), matching the tap-major column order
        let w = self.weight.permute((2, 1, 0))?.contiguous()?.reshape((k * c, out))?;
        let y = cols.matmul(&w)?.broadcast_add(&self.bias)?;
        Ok(y.reshape((b, t_out, out))?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            weight: ps.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            bias: ps.constant(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Learned lookup table.
#[derive(Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, name: &str, count: usize, dim: usize) -> Result<Self> {
        Ok(Embedding {
            table: ps.normal(&format!("{name}.table"), &[count, dim], 0.5)?,
        })
    }

    /// `ids` of any shape (u32) -> `ids.shape + [dim]`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut dims = ids.dims().to_vec();
        let flat = self.table.embedding(&ids.flatten_all()?)?;
        dims.push(self.table.dim(1)?);
        Ok(flat.reshape(dims)?)
    }
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Multi-head self-attention over `(batch, len, width)`.
#[derive(Clone)]
pub struct SelfAttention {
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        assert!(width % heads == 0, "width {width} not divisible by {heads} heads");
        Ok(SelfAttention {
            qkv: Linear::new(ps, &format!("{name}.qkv"), width, 3 * width)?,
            out: Linear::new(ps, &format!("{name}.out"), width, width)?,
            heads,
        })
    }

    /// `key_bias` is an additive `(batch, 1, 1, len)` mask (0 or large negative).
    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, l, w) = x.dims3()?;
        let hd = w / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, l, 3, self.heads, hd))?;
        let q = qkv.narrow(2, 0, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let k = qkv.narrow(2, 1, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let v = qkv.narrow(2, 2, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let mut scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        if let Some(bias) = key_bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = softmax(&scores)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, l, w))?;
        self.out.forward(&y)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(TransformerBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), width)?,
            attn: SelfAttention::new(ps, &format!("{name}.attn"), width, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), width)?,
            fc1: Linear::new(ps, &format!("{name}.fc1"), width, 4 * width)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), 4 * width, width)?,
        })
    }

    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?, key_bias)?)?;
        let h = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.relu()?)?;
        Ok((x + h)?)
    }
}

/// Fixed sinusoidal position table, `(len, width)`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Result<Tensor> {
    let mut data = vec![0f32; len * width];
    for p in 0..len {
        for i in 0..width / 2 {
            let freq = 1.0 / 10000f32.powf(2.0 * i as f32 / width as f32);
            data[p * width + 2 * i] = (p as f32 * freq).sin();
            data[p * width + 2 * i + 1] = (p as f32 * freq).cos();
        }
    }
    Ok(Tensor::from_vec(data, (len, width), &candle_core::Device::Cpu)?)
}

/// Additive key mask from per-row valid lengths: `(batch, 1, 1, max_len)`.
pub fn key_padding_bias(lengths: &[usize], max_len: usize) -> Result<Tensor> {
    let mut data = vec![0f32; lengths.len() * max_len];
    for (b, &n) in lengths.iter().enumerate() {
        for j in n..max_len {
            data[b * max_len + j] = -1e9;
        }
    }
    Ok(Tensor::from_vec(data, (lengths.len(), 1, 1, max_len), &candle_core::Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn log_softmax_rows_normalised() {
        let x = Tensor::new(&[[1.0f32, 2.0, 3.0], [-50.0, 0.0, 50.0]], &Device::Cpu).unwrap();
        let l = log_softmax(&x).unwrap();
        let sums = l.exp().unwrap().sum(1).unwrap().to_vec1::<f32>().unwrap();
        for s in sums {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn padded_keys_get_no_attention() {
        let mut ps = ParamStore::new(0);
        let attn = SelfAttention::new(&mut ps, "a", 8, 2).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 5, 8), &Device::Cpu).unwrap();
        let bias = key_padding_bias(&[3], 5).unwrap();
        let full = attn.forward(&x, Some(&bias)).unwrap();
        // changing padded rows must not affect the valid rows
        let x2 = Tensor::cat(&[x.narrow(1, 0, 3).unwrap(), (x.narrow(1, 3, 2).unwrap() * 10.0).unwrap()], 1).unwrap();
        let other = attn.forward(&x2, Some(&bias)).unwrap();
        let a = full.narrow(1, 0, 3).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = other.narrow(1, 0, 3).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    fn conv_f64(weight: Tensor, stride: usize, padding: usize, dilation: usize) -> Conv1d {
        let out = weight.dim(0).unwrap();
        Conv1d {
            weight,
            bias: Tensor::zeros(out, candle_core::DType::F64, &Device::Cpu).unwrap(),
            stride,
            padding,
            dilation,
        }
    }

    #[test]
    fn conv_forward_matches_backend() {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f64, 1.0, (2, 3, 11), &dev).unwrap();
        let w = Tensor::randn(0f64, 1.0, (4, 3, 3), &dev).unwrap();
        for (stride, pad, dil) in [(1, 1, 1), (2, 1, 1), (1, 3, 3), (1, 0, 1), (2, 0, 2), (3, 1, 1), (2, 2, 1)] {
            let ours = conv_f64(w.clone(), stride, pad, dil).forward(&x).unwrap();
            let theirs = x.conv1d(&w, pad, stride, dil, 1).unwrap();
            assert_eq!(ours.dims(), theirs.dims());
            let d = (ours - theirs).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(d < 1e-10, "stride {stride} pad {pad} dil {dil}: {d}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let dev = Device::Cpu;
        let x0 = Tensor::randn(0f64, 1.0, (2, 3, 9), &dev).unwrap();
        let w0 = Tensor::randn(0f64, 1.0, (4, 3, 4), &dev).unwrap();
        for (stride, pad, dil) in [(1, 1, 1), (2, 1, 1), (1, 3, 2)] {
            let f = |x: &Tensor, w: &Tensor| {
                conv_f64(w.clone(), stride, pad, dil).forward(x).unwrap().sqr().unwrap().sum_all().unwrap()
            };
            let xv = candle_core::Var::from_tensor(&x0).unwrap();
            let wv = candle_core::Var::from_tensor(&w0).unwrap();
            let g = f(xv.as_tensor(), wv.as_tensor()).backward().unwrap();
            for (var, base, other_is_x) in [(&wv, &w0, false), (&xv, &x0, true)] {
                let grad = g.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
                let flat = base.flatten_all().unwrap().to_vec1::<f64>().unwrap();
                for i in (0..flat.len()).step_by(5) {
                    let bump = |h: f64| {
                        let mut v = flat.clone();
                        v[i] += h;
                        let t = Tensor::from_vec(v, base.dims(), &dev).unwrap();
                        let out = if other_is_x { f(&t, &w0) } else { f(&x0, &t) };
                        out.to_scalar::<f64>().unwrap()
                    };
                    let fd = (bump(1e-5) - bump(-1e-5)) / 2e-5;
                    assert!((grad[i] - fd).abs() < 1e-5 * fd.abs().max(1.0), "{i}: {} vs {fd}", grad[i]);
                }
            }
        }
    }
}

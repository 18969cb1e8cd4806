//! Nearest-code search and the residual recursion. Pure functions over flat
//! `K x dim` code tables.

use crate::error::{Error, Result};

/// A read-only view of `k` codes of width `dim`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct CodeTable<'a> {
    pub codes: &'a [f32],
    pub dim: usize,
}

impl<'a> CodeTable<'a> {
    pub fn new(codes: &'a [f32], dim: usize) -> Self {
        assert!(dim > 0 && codes.len() % dim == 0, "code table shape");
        CodeTable { codes, dim }
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, k: usize) -> &'a [f32] {
        &self.codes[k * self.dim..(k + 1) * self.dim]
    }
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the code closest to `z` in Euclidean distance; ties go to the
/// smallest index.
pub fn quantize_nearest<'a>(z: &[f32], table: CodeTable<'a>) -> (usize, &'a [f32]) {
    debug_assert_eq!(z.len(), table.dim);
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for k in 0..table.len() {
        let d = squared_distance(z, table.code(k));
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, table.code(best))
}

/// Per-layer outcome of quantizing one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCodes {
    pub indices: Vec<usize>,
    /// `quantized[v]` is the code picked at layer `v` for residual `r^v`.
    pub quantized: Vec<Vec<f32>>,
}

impl ResidualCodes {
    pub fn reconstruction(&self) -> Vec<f32> {
        let mut out = vec![0f32; self.quantized.first().map_or(0, |q| q.len())];
        for q in &self.quantized {
            for (o, v) in out.iter_mut().zip(q) {
                *o += v;
            }
        }
        out
    }
}

/// `r^0 = z`; at each layer pick the nearest code to the running residual and
/// subtract it.
pub fn residual_quantize(z: &[f32], layers: &[CodeTable<'_>]) -> ResidualCodes {
    let mut residual = z.to_vec();
    let mut indices = Vec::with_capacity(layers.len());
    let mut quantized = Vec::with_capacity(layers.len());
    for table in layers {
        let (k, code) = quantize_nearest(&residual, *table);
        for (r, c) in residual.iter_mut().zip(code) {
            *r -= c;
        }
        indices.push(k);
        quantized.push(code.to_vec());
    }
    ResidualCodes { indices, quantized }
}

/// Sum of the indexed codes over layers.
pub fn dequantize_vector(indices: &[usize], layers: &[CodeTable<'_>]) -> Result<Vec<f32>> {
    if indices.len() != layers.len() {
        return Err(Error::Argument(format!(
            "{} indices for {} quantizer layers",
            indices.len(),
            layers.len()
        )));
    }
    let dim = layers.first().map_or(0, |t| t.dim);
    let mut out = vec![0f32; dim];
    for (&k, table) in indices.iter().zip(layers) {
        if k >= table.len() {
            return Err(Error::Argument(format!("code index {k} >= codebook size {}", table.len())));
        }
        for (o, c) in out.iter_mut().zip(table.code(k)) {
            *o += c;
        }
    }
    Ok(out)
}

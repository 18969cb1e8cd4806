use serde::{Deserialize, Serialize};

/// One input slot of the masked transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Code(u32),
    /// Position hidden during training / re-masked during decoding.
    Mask,
    /// Not-yet-decoded position at the start of inference.
    Empty,
    Pad,
}

impl Token {
    /// Embedding id given `K` real codes: codes, then MASK, EMPTY, PAD.
    pub fn id(self, codebook_size: usize) -> u32 {
        let k = codebook_size as u32;
        match self {
            Token::Code(c) => c,
            Token::Mask => k,
            Token::Empty => k + 1,
            Token::Pad => k + 2,
        }
    }
}

pub const SPECIAL_TOKENS: usize = 3;

/// The token sequence fed to the predictor for one motion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenState {
    pub tokens: Vec<Token>,
}

impl TokenState {
    pub fn empty(len: usize) -> Self {
        TokenState {
            tokens: vec![Token::Empty; len],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        matches!(self.tokens[i], Token::Mask | Token::Empty)
    }
}

/// Per-position log-probabilities over the `K` codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeDistribution {
    pub log_probs: Vec<f32>,
    pub codebook_size: usize,
}

impl CodeDistribution {
    pub fn len(&self) -> usize {
        self.log_probs.len() / self.codebook_size
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.log_probs[t * self.codebook_size..(t + 1) * self.codebook_size]
    }

    /// `log(sum(exp(row)))` per row; zero for a normalised distribution.
    pub fn row_log_sum_exp(&self) -> Vec<f32> {
        (0..self.len()).map(|t| log_sum_exp(self.row(t))).collect()
    }
}

pub fn log_sum_exp(row: &[f32]) -> f32 {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if m == f32::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| ((v - m) as f64).exp()).sum::<f64>().ln() as f32
}

/// Per-position diagonal Gaussian: `len x dim` means and log-variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f32>,
    pub log_var: Vec<f32>,
    pub dim: usize,
}

impl LatentGaussian {
    pub fn len(&self) -> usize {
        self.mu.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

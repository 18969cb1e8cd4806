//! Retrieval, distribution and diversity metrics over extractor features.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::syndata::CaptionTokens;

pub const TOP_K: usize = 3;
pub const MM_GENERATIONS: usize = 30;
pub const MM_PAIRS: usize = 10;

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// Top-1..3 retrieval accuracy. Motion `i`'s true caption feature is
/// `texts[i]`; it is ranked by Euclidean distance against `pool_size - 1`
/// features drawn from other entries whose caption tokens differ.
pub fn r_precision(
    motions: &[Vec<f32>],
    texts: &[Vec<f32>],
    captions: &[&CaptionTokens],
    pool_size: usize,
    rng: &mut Rng,
) -> Result<[f64; TOP_K]> {
    if motions.len() != texts.len() || texts.len() != captions.len() {
        return Err(Error::Argument("r_precision inputs must be aligned".into()));
    }
    let mut distinct: Vec<&[u16]> = captions.iter().map(|c| c.tokens.as_slice()).collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < pool_size || pool_size < 2 {
        return Err(Error::Argument(format!(
            "r_precision needs {pool_size} distinct captions, found {}",
            distinct.len()
        )));
    }
    let n = motions.len();
    let mut hits = [0usize; TOP_K];
    for i in 0..n {
        let d_true = euclidean(&motions[i], &texts[i]);
        let mut closer = 0;
        let mut drawn = 0;
        while drawn < pool_size - 1 {
            let j = rng.random_range(0..n);
            if captions[j].tokens == captions[i].tokens {
                continue;
            }
            drawn += 1;
            if euclidean(&motions[i], &texts[j]) < d_true {
                closer += 1;
            }
        }
        for (k, h) in hits.iter_mut().enumerate() {
            if closer <= k {
                *h += 1;
            }
        }
    }
    Ok(hits.map(|h| h as f64 / n as f64))
}

fn moments(x: &[Vec<f32>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Argument("fid needs at least two samples per side".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Argument("fid features must be finite and equally sized".into()));
    }
    let m = DMatrix::from_fn(n, d, |i, j| x[i][j] as f64);
    let mean = DVector::from_fn(d, |j, _| m.column(j).mean());
    let mut c = m.clone();
    for j in 0..d {
        let mu = mean[j];
        c.column_mut(j).iter_mut().for_each(|v| *v -= mu);
    }
    let cov = c.transpose() * &c / (n - 1) as f64;
    Ok((mean, cov))
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let vals = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

/// Frechet distance between Gaussians fitted to the two feature sets:
/// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`.
pub fn fid(real: &[Vec<f32>], generated: &[Vec<f32>]) -> Result<f64> {
    let (m1, s1) = moments(real)?;
    let (m2, s2) = moments(generated)?;
    if m1.len() != m2.len() {
        return Err(Error::Argument("fid feature widths differ".into()));
    }
    let r1 = sym_sqrt(&s1);
    let cross = sym_sqrt(&(&r1 * &s2 * &r1));
    let v = (&m1 - &m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(v.max(0.0))
}

/// Mean Euclidean distance between aligned text and motion features.
pub fn mm_dist(texts: &[Vec<f32>], motions: &[Vec<f32>]) -> Result<f64> {
    if texts.len() != motions.len() || texts.is_empty() {
        return Err(Error::Argument(format!(
            "mm_dist needs aligned non-empty lists, got {} and {}",
            texts.len(),
            motions.len()
        )));
    }
    Ok(texts.iter().zip(motions).map(|(t, m)| euclidean(t, m)).sum::<f64>() / texts.len() as f64)
}

/// The seeded pairing used for one caption: 20 of 30 indices, in pairs.
pub fn mm_pairs(seed: u64, caption_index: usize) -> Vec<(usize, usize)> {
    let mut rng = rng_from(derive_seed(seed, caption_index as u64));
    let mut idx: Vec<usize> = (0..MM_GENERATIONS).collect();
    idx.shuffle(&mut rng);
    (0..MM_PAIRS).map(|p| (idx[2 * p], idx[2 * p + 1])).collect()
}

/// Average distance over 10 seeded disjoint pairs per caption, averaged
/// over captions. Every caption must have exactly 30 generations.
pub fn multimodality(per_caption: &[Vec<Vec<f32>>], seed: u64) -> Result<f64> {
    if per_caption.is_empty() {
        return Err(Error::Argument("multimodality needs at least one caption".into()));
    }
    let mut total = 0.0;
    for (c, gens) in per_caption.iter().enumerate() {
        if gens.len() != MM_GENERATIONS {
            return Err(Error::Argument(format!(
                "caption {c} has {} generations, multimodality needs {MM_GENERATIONS}",
                gens.len()
            )));
        }
        let pairs = mm_pairs(seed, c);
        total += pairs.iter().map(|&(a, b)| euclidean(&gens[a], &gens[b])).sum::<f64>() / MM_PAIRS as f64;
    }
    Ok(total / per_caption.len() as f64)
}

/// Mean and 95% half-width `1.96 sd / sqrt(n)` (sample sd); zero for one value.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn unit(rng: &mut Rng, d: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn captions(n: usize) -> Vec<CaptionTokens> {
        (0..n)
            .map(|i| CaptionTokens {
                tokens: vec![1, (i % 60) as u16 + 2, (i / 60) as u16 + 2],
                described: crate::syndata::DescribedMask::NONE,
            })
            .collect()
    }

    #[test]
    fn perfect_and_random_retrieval() {
        let mut rng = rng_from(0);
        let caps = captions(5000);
        let refs: Vec<&CaptionTokens> = caps.iter().collect();
        let texts: Vec<Vec<f32>> = (0..5000).map(|_| unit(&mut rng, 8)).collect();
        let perfect = r_precision(&texts, &texts, &refs, 32, &mut rng).unwrap();
        assert_eq!(perfect, [1.0; 3]);
        let motions: Vec<Vec<f32>> = (0..5000).map(|_| unit(&mut rng, 8)).collect();
        let r = r_precision(&motions, &texts, &refs, 32, &mut rng).unwrap();
        assert!((r[0] - 1.0 / 32.0).abs() < 0.01, "{r:?}");
        assert!(r[0] <= r[1] && r[1] <= r[2]);
        assert!(r_precision(&motions[..10], &texts[..10], &refs[..10], 32, &mut rng).is_err());
    }

    #[test]
    fn fid_closed_forms() {
        let a: Vec<Vec<f32>> = vec![vec![-1.0], vec![1.0]];
        // unbiased variance of {-1, 1} is 2; shift the mean by one
        let b: Vec<Vec<f32>> = vec![vec![0.0], vec![2.0]];
        assert!(fid(&a, &a).unwrap().abs() < 1e-6);
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-6);
        // variance 2 vs 8: (sqrt2 - sqrt8)^2 = 2
        let c: Vec<Vec<f32>> = vec![vec![-2.0], vec![2.0]];
        assert!((fid(&a, &c).unwrap() - 2.0).abs() < 1e-6);
        assert!((fid(&a, &c).unwrap() - fid(&c, &a).unwrap()).abs() < 1e-8);
        assert!(fid(&a[..1], &b).is_err());
        assert!(fid(&[vec![f32::NAN], vec![0.0]], &b).is_err());
    }

    #[test]
    fn fid_matches_gaussian_formula_on_samples() {
        // diagonal Gaussians: closed form sum (m1-m2)^2 + (s1-s2)^2
        let mut rng = rng_from(4);
        let n = 200_000;
        let (m1, s1) = ([0.0f32, 1.0], [1.0f32, 2.0]);
        let (m2, s2) = ([0.5f32, -1.0], [1.5f32, 0.5]);
        let draw = |m: [f32; 2], s: [f32; 2], rng: &mut Rng| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..2).map(|j| m[j] + s[j] * { let z: f32 = StandardNormal.sample(&mut *rng); z }).collect())
                .collect()
        };
        let a = draw(m1, s1, &mut rng);
        let b = draw(m2, s2, &mut rng);
        let want: f64 = (0..2).map(|j| ((m1[j] - m2[j]).powi(2) + (s1[j] - s2[j]).powi(2)) as f64).sum();
        let got = fid(&a, &b).unwrap();
        assert!((got - want).abs() < 0.05, "{got} vs {want}");
    }

    #[test]
    fn mm_dist_cases() {
        let a = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![0.0f32, 1.0], vec![1.0, 0.0]];
        assert_eq!(mm_dist(&a, &a).unwrap(), 0.0);
        assert!((mm_dist(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-6);
        let ra: Vec<Vec<f32>> = a.iter().rev().cloned().collect();
        let rb: Vec<Vec<f32>> = b.iter().rev().cloned().collect();
        assert_eq!(mm_dist(&a, &b).unwrap(), mm_dist(&ra, &rb).unwrap());
        assert!(mm_dist(&a, &b[..1]).is_err());
    }

    #[test]
    fn multimodality_cases() {
        let same = vec![vec![vec![0.3f32, 0.4]; 30]; 3];
        assert_eq!(multimodality(&same, 1).unwrap(), 0.0);
        // alternate between two points at distance 2; oracle counts mixed pairs
        let alt: Vec<Vec<f32>> = (0..30).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }, 0.0]).collect();
        let pairs = mm_pairs(9, 0);
        let mixed = pairs.iter().filter(|(a, b)| a % 2 != b % 2).count();
        let got = multimodality(&[alt.clone()], 9).unwrap();
        assert!((got - 2.0 * mixed as f64 / 10.0).abs() < 1e-12);
        let doubled: Vec<Vec<f32>> = alt.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        assert!((multimodality(&[doubled], 9).unwrap() - 2.0 * got).abs() < 1e-12);
        assert!(multimodality(&[alt[..29].to_vec()], 9).is_err());
        // pairs are disjoint
        let mut used: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 20);
    }

    #[test]
    fn confidence_half_widths() {
        assert_eq!(mean_ci(&[2.0; 5]), (2.0, 0.0));
        assert_eq!(mean_ci(&[3.5]), (3.5, 0.0));
        // half-width shrinks as 1/sqrt(n) on resampled inputs
        let mut rng = rng_from(8);
        let avg_hw = |n: usize, rng: &mut Rng| {
            (0..400)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
                    mean_ci(&v).1
                })
                .sum::<f64>()
                / 400.0
        };
        let (h10, h40, h160) = (avg_hw(10, &mut rng), avg_hw(40, &mut rng), avg_hw(160, &mut rng));
        let slope = ((h160 / h10).ln()) / (16f64.ln());
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
        assert!(h40 < h10);
    }
}

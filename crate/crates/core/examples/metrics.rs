//! The evaluation metrics on synthetic features: R-Precision of random
//! features sits at the 1/pool baseline, FID of two Gaussians matches the
//! closed form, and identical generations have zero MultiModality.
//!
//! ```bash
//! cargo run --release -p textmotion --example metrics
//! ```

use rand_distr::{Distribution, StandardNormal};
use textmotion::evalsuite::{fid, multimodality, r_precision};
use textmotion::syndata::{CaptionTokens, DescribedMask};

fn main() -> textmotion::Result<()> {
    let mut rng = textmotion::rng::rng_from(0);
    let mut gauss = |n: usize, dim: usize, mean: f32| -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| (0..dim).map(|_| { let z: f32 = StandardNormal.sample(&mut rng); mean + z }).collect())
            .collect()
    };

    let n = 512;
    let motions = gauss(n, 8, 0.0);
    let texts = gauss(n, 8, 0.0);
    let captions: Vec<CaptionTokens> = (0..n)
        .map(|i| CaptionTokens {
            tokens: vec![1 + (i % 60) as u16, 1 + (i / 60) as u16],
            described: DescribedMask::NONE,
        })
        .collect();
    let refs: Vec<&CaptionTokens> = captions.iter().collect();
    let mut prng = textmotion::rng::rng_from(1);
    let r = r_precision(&motions, &texts, &refs, 32, &mut prng)?;
    println!("random features, pool 32: top-1/2/3 = {:.3} {:.3} {:.3} (baseline {:.3})", r[0], r[1], r[2], 1.0 / 32.0);

    let a = gauss(4000, 4, 0.0);
    let b = gauss(4000, 4, 1.0);
    println!("FID(N(0, I), N(1, I)) in 4-d = {:.3} (closed form 4.0)", fid(&a, &b)?);

    let same = vec![vec![vec![0.5f32; 8]; 30]; 10];
    println!("MultiModality of identical generations = {}", multimodality(&same, 0)?);
    Ok(())
}

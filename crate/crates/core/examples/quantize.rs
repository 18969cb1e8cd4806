//! Residual quantization of random vectors against random codebooks:
//! each added layer can only shrink the reconstruction error.
//!
//! ```bash
//! cargo run --release -p textmotion --example quantize
//! ```

use rand_distr::{Distribution, StandardNormal};
use textmotion::rvq::{residual_quantize, CodebookLayer, CodeTable};

fn main() -> textmotion::Result<()> {
    let (k, dim, layers) = (16, 4, 4);
    let mut rng = textmotion::rng::rng_from(0);
    let mut normal = |n: usize, scale: f32| -> Vec<f32> {
        (0..n).map(|_| { let z: f32 = StandardNormal.sample(&mut rng); scale * z }).collect::<Vec<f32>>()
    };
    // residual layers keep a zero code, so skipping a layer is always possible
    let mut books = Vec::new();
    for v in 0..layers {
        let mut layer = CodebookLayer::new(k, dim, v > 0)?;
        let scale = 0.5f32.powi(v as i32);
        let codes = normal(k * dim, scale);
        let start = if v > 0 { dim } else { 0 };
        layer.codes[start..].copy_from_slice(&codes[start..]);
        books.push(layer);
    }
    let tables: Vec<CodeTable> = books.iter().map(|b| b.table()).collect();
    for i in 0..5 {
        let z = normal(dim, 1.0);
        let codes = residual_quantize(&z, &tables);
        let mut acc = vec![0f32; dim];
        let errs: Vec<String> = codes
            .quantized
            .iter()
            .map(|q| {
                acc.iter_mut().zip(q).for_each(|(a, q)| *a += q);
                let e: f32 = z.iter().zip(&acc).map(|(a, b)| (a - b) * (a - b)).sum();
                format!("{:.3}", e.sqrt())
            })
            .collect();
        println!("vector {i}: codes {:?}  prefix error {}", codes.indices, errs.join(" -> "));
    }
    Ok(())
}

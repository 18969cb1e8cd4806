//! Mix text- and noise-conditioned code distributions at several guidance
//! weights and watch the text-preferred code sharpen.
//!
//! ```bash
//! cargo run --release -p textmotion --example guidance
//! ```

use textmotion::generator::guided_fuse;
use textmotion::predictor::CodeDistribution;

fn dist(p: &[f32]) -> CodeDistribution {
    CodeDistribution {
        log_probs: p.iter().map(|v| v.ln()).collect(),
        codebook_size: p.len(),
    }
}

fn main() -> textmotion::Result<()> {
    let text = dist(&[0.6, 0.3, 0.1]);
    let noise = dist(&[0.4, 0.4, 0.2]);
    println!("  w   p(code 0)  p(code 1)  p(code 2)");
    for w in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0] {
        let g = guided_fuse(&text, &noise, w)?;
        let p: Vec<String> = g.row(0).iter().map(|l| format!("{:9.4}", l.exp())).collect();
        println!("{w:4.1}  {}", p.join("  "));
    }
    Ok(())
}

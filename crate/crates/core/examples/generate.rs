//! Generate motions for a caption from a trained run directory and export
//! them as CSV plus a JSON sidecar.
//!
//! ```bash
//! cargo run --release -p textmotion --example pipeline -- runs/example
//! cargo run --release -p textmotion --example generate -- runs/example "a person jumps to the left" [w] [count]
//! ```

use textmotion::experiment::{ExperimentConfig, RunLayout, TrainedModels};
use textmotion::generator::{export_generation, GenerationRequest, LengthMode};
use textmotion::syndata::CaptionTokens;

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "runs/example".into());
    let caption = args.next().unwrap_or_else(|| "a person jumps to the left".into());
    let w = args.next().and_then(|a| a.parse().ok()).unwrap_or(3.0);
    let count = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);

    let layout = RunLayout::new(&dir);
    let cfg = ExperimentConfig::load(&layout.root.join("config.toml"))?;
    let models = TrainedModels::load(&cfg, &layout)?;
    let gen = models.generator();
    let caption = CaptionTokens::parse(&caption)?;
    let requests: Vec<GenerationRequest> = (0..count)
        .map(|i| GenerationRequest {
            w,
            length: LengthMode::Auto,
            ..GenerationRequest::new(caption.clone(), i as u64)
        })
        .collect();
    let out = layout.root.join("example-generations");
    for (i, (req, res)) in requests.iter().zip(gen.generate_batch(&requests)?).enumerate() {
        let layer0: Vec<usize> = res.codes.layer(0);
        println!("#{i}: {} frames, layer-0 codes {:?}", res.motion.len(), layer0);
        export_generation(&out, &format!("sample_{i}"), req, &res)?;
    }
    println!("exported to {}", out.display());
    Ok(())
}

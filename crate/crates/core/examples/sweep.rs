//! Sweep the guidance weight and print diversity against retrieval accuracy.
//!
//! ```bash
//! cargo run --release -p textmotion --example sweep -- runs/example [repeats]
//! ```

use textmotion::evalsuite::{sweep_w, EvalSettings};
use textmotion::experiment::{ExperimentConfig, RunLayout, TrainedModels};

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "runs/example".into());
    let repeats = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);

    let layout = RunLayout::new(&dir);
    let cfg = ExperimentConfig::load(&layout.root.join("config.toml"))?;
    let models = TrainedModels::load(&cfg, &layout)?;
    let settings = EvalSettings {
        repeats,
        ..cfg.eval_settings()
    };
    let ws = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let reports = sweep_w(&models.generator(), &models.extractor, &models.dataset, &settings, &ws, &models.fingerprints)?;
    println!("{:>3}  {:>6}  {:>13}  {:>6}", "w", "top1", "multimodality", "fid");
    for r in &reports {
        println!(
            "{:>3}  {:6.3}  {:13.3}  {:6.3}",
            r.w,
            r.mean("top1"),
            r.mean("multimodality"),
            r.mean("fid")
        );
    }
    Ok(())
}

//! Evaluate a trained run directory: R-Precision, FID, MM-Dist and
//! MultiModality over repeated generations with 95% intervals.
//!
//! ```bash
//! cargo run --release -p textmotion --example evaluate -- runs/example [repeats]
//! ```

use textmotion::evalsuite::{evaluate, EvalSettings, METRICS};
use textmotion::experiment::{ExperimentConfig, RunLayout, TrainedModels};

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "runs/example".into());
    let repeats = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);

    let layout = RunLayout::new(&dir);
    let cfg = ExperimentConfig::load(&layout.root.join("config.toml"))?;
    let models = TrainedModels::load(&cfg, &layout)?;
    let settings = EvalSettings {
        repeats,
        ..cfg.eval_settings()
    };
    let report = evaluate(&models.generator(), &models.extractor, &models.dataset, &settings, &models.fingerprints)?;
    println!("{:>14}  {:>8}  {:>8}  {:>8}", "metric", "mean", "ci95", "real");
    for m in METRICS {
        let s = report.get(m).expect("reported");
        let real = report.real.get(m).map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{m:>14}  {:8.3}  {:8.3}  {real:>8}", s.mean, s.ci95);
    }
    Ok(())
}

//! Train and evaluate the ablation presets side by side at reduced size and
//! print the comparison table.
//!
//! ```bash
//! cargo run --release -p textmotion --example ablate -- [run_dir] [presets]
//! ```

use std::path::PathBuf;

use textmotion::experiment::{ablate_stage, parse_presets, ExperimentConfig, RunLayout};

fn main() -> textmotion::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args.next().unwrap_or_else(|| "runs/example-ablate".into()).into();
    let presets = parse_presets(&args.next().unwrap_or_else(|| "baseline_rvq,plus_vp,plus_ns".into()))?;

    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "corpus.n_samples=800",
        "rvq.epochs=40",
        "predictor.epochs=15",
        "extractor.epochs=15",
        "eval.repeats=5",
    ])?;
    let cfg = cfg.resolve()?;
    let table = ablate_stage(&cfg, &RunLayout::new(&dir), &presets, true)?;
    print!("{}", table.to_markdown());
    for r in &table.rows {
        println!(
            "{:>15}: codec L1/std {:.3}, masked NLL {:.3}, train {:.0}s, eval {:.0}s",
            r.label, r.codec_relative_l1, r.heldout.masked_nll, r.train_seconds, r.eval_seconds
        );
    }
    Ok(())
}

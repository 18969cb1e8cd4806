//! End-to-end run at reduced size: corpus, codec, predictor, extractor and
//! a short evaluation, all written to one run directory that the other
//! examples (`generate`, `evaluate`, `sweep`) can reuse.
//!
//! ```bash
//! cargo run --release -p textmotion --example pipeline -- [run_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use textmotion::experiment::{self as exp, ExperimentConfig, RunLayout};

/// Settings small enough to finish in a few minutes on one core.
pub fn quick_config() -> textmotion::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "corpus.n_samples=800",
        "rvq.epochs=40",
        "predictor.epochs=15",
        "extractor.epochs=15",
        "eval.repeats=3",
    ])?;
    cfg.resolve()
}

fn main() -> textmotion::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "runs/example".into()).into();
    let layout = RunLayout::new(&dir);
    let cfg = quick_config()?;
    let t0 = Instant::now();

    let (ds, _) = exp::gen_data(&cfg, &layout, true)?;
    println!("data: {} samples", ds.len());
    let (_, _, rec) = exp::train_rvq_stage(&cfg, &layout, true)?;
    println!("codec: held-out L1/std {:.3}", rec.relative_l1);
    let (_, _, nll) = exp::train_predictor_stage(&cfg, &layout, true)?;
    println!("predictor: masked NLL {:.3} vs uniform {:.3}", nll.masked_nll, nll.uniform);
    let (_, _, check) = exp::train_eval_stage(&cfg, &layout, true)?;
    println!("extractor: matched-pair accuracy {:.3}", check.matched_pair_accuracy);
    let report = exp::evaluate_stage(&cfg, &layout, true)?;
    for m in textmotion::evalsuite::METRICS {
        let s = report.get(m).expect("reported");
        println!("{m:>14}  {:.3} ± {:.3}", s.mean, s.ci95);
    }
    println!("done in {:.0?}; artifacts in {}", t0.elapsed(), dir.display());
    Ok(())
}

//! Command-line front end. Every subcommand works inside one run directory;
//! see `textmotion --help`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use textmotion::experiment::{self as exp, ExperimentConfig, GenerateOptions, RunLayout};
use textmotion::generator::LengthMode;
use textmotion::{Error, Result};

#[derive(Parser)]
#[command(name = "textmotion", version, about = "Desk-scale text-to-motion pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file (defaults apply to omitted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,
    /// Override a config key, e.g. `--set rvq.epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set preset=NAME`; also applies the preset's axes.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Use the models `ablate` trained for the preset (`<run>/ablate/<preset>/`)
    /// instead of the run root's.
    #[arg(long, global = true)]
    ablation_models: bool,
    /// Replace existing artifacts instead of refusing.
    #[arg(long, global = true)]
    force: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into <run>/data.
    GenData,
    /// Train the motion codec into <run>/rvq.
    TrainRvq,
    /// Train the code predictor into <run>/predictor.
    TrainPredictor,
    /// Train the evaluation extractor into <run>/extractor.
    TrainEval,
    /// Generate motions for a caption into <run>/generations.
    Generate {
        #[arg(long)]
        caption: String,
        /// Guidance weight (config default 3).
        #[arg(long)]
        w: Option<f64>,
        /// Frame count or `auto`.
        #[arg(long, default_value = "auto")]
        length: String,
        /// Sampling seed; item i uses a seed derived from (seed, i).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate the trained models into <run>/reports/eval.json.
    Evaluate {
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Evaluate over several guidance weights into <run>/reports/sweep.csv.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
        w_list: Vec<f64>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Train and evaluate presets side by side into <run>/reports/ablation.*.
    Ablate {
        #[arg(long, default_value = "baseline_vq,baseline_rvq,plus_vp,plus_ns")]
        presets: String,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn parse_length(s: &str) -> Result<LengthMode> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(LengthMode::Auto);
    }
    s.parse()
        .map(LengthMode::Frames)
        .map_err(|_| Error::Argument(format!("--length expects a frame count or `auto`, got `{s}`")))
}

fn resolve_config(common: &Common, command: Option<&Command>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut sets = common.set.clone();
    let repeats = match command {
        Some(Command::Evaluate { repeats } | Command::Sweep { repeats, .. } | Command::Ablate { repeats, .. }) => *repeats,
        _ => None,
    };
    if let Some(r) = repeats {
        sets.push(format!("eval.repeats={r}"));
    }
    cfg.apply_overrides(&sets)?;
    match &common.preset {
        Some(p) => cfg.with_preset(p.parse()?),
        None => cfg.resolve(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common, cli.command.as_ref())?;
    let command = match cli.command {
        _ if cli.common.print_config => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Some(c) => c,
        None => return Err(Error::Argument("no subcommand given (see --help)".into())),
    };
    let mut layout = RunLayout::new(&cli.common.run_dir);
    if cli.common.ablation_models {
        layout = layout.for_preset(cfg.preset);
    }
    let force = cli.common.force;
    match command {
        Command::GenData => {
            let (ds, fp) = exp::gen_data(&cfg, &layout, force)?;
            println!(
                "wrote {} samples ({} train / {} test) to {} [{}]",
                ds.len(),
                ds.train_indices.len(),
                ds.test_indices.len(),
                layout.data().display(),
                &fp[..12]
            );
        }
        Command::TrainRvq => {
            let (_, fp, rep) = exp::train_rvq_stage(&cfg, &layout, force)?;
            println!(
                "codec {} [{}]: held-out L1/std {:.4}",
                layout.rvq().display(),
                &fp[..12],
                rep.relative_l1
            );
        }
        Command::TrainPredictor => {
            let (_, fp, nll) = exp::train_predictor_stage(&cfg, &layout, force)?;
            println!(
                "predictor {} [{}]: held-out masked NLL {:.3}, residual NLL {:.3} (uniform {:.3})",
                layout.predictor().display(),
                &fp[..12],
                nll.masked_nll,
                nll.residual_nll,
                nll.uniform
            );
        }
        Command::TrainEval => {
            let (_, fp, check) = exp::train_eval_stage(&cfg, &layout, force)?;
            println!(
                "extractor {} [{}]: matched-pair accuracy {:.3}",
                layout.extractor().display(),
                &fp[..12],
                check.matched_pair_accuracy
            );
        }
        Command::Generate {
            caption,
            w,
            length,
            seed,
            count,
            steps,
        } => {
            let opts = GenerateOptions {
                caption,
                w,
                length: parse_length(&length)?,
                decode_steps: steps,
                seed,
                count,
            };
            for p in exp::generate_stage(&cfg, &layout, &opts, force)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate { .. } => {
            let r = exp::evaluate_stage(&cfg, &layout, force)?;
            for m in textmotion::evalsuite::METRICS {
                let s = r.get(m).expect("reported");
                println!("{m:>14}  {:.4} ± {:.4}", s.mean, s.ci95);
            }
        }
        Command::Sweep { w_list, .. } => {
            let reports = exp::sweep_stage(&cfg, &layout, &w_list, force)?;
            println!("{:>4}  {:>8}  {:>14}", "w", "top1", "multimodality");
            for r in &reports {
                println!("{:>4}  {:>8.4}  {:>14.4}", r.w, r.mean("top1"), r.mean("multimodality"));
            }
        }
        Command::Ablate { presets, .. } => {
            let presets = exp::parse_presets(&presets)?;
            let table = exp::ablate_stage(&cfg, &layout, &presets, force)?;
            print!("{}", table.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

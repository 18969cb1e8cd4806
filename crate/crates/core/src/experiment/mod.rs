//! Experiment orchestration: configuration, run directories and the
//! pipeline stages the command-line tool exposes.

pub mod config;
pub mod pipeline;
pub mod run;

pub use config::{parse_presets, EvalSection, ExperimentConfig, GenerationDefaults, Preset, PLUS_NS_P_NOISE};
pub use pipeline::{
    ablate_stage, ensure_data, evaluate_stage, gen_data, generate_stage, load_codec, load_data, load_extractor,
    load_predictor, sweep_stage, train_eval_stage, train_predictor_stage, train_rvq_stage, AblationRow,
    AblationTable, GenerateOptions, RetrievalCheck, TrainedModels,
};
pub use run::{claim, fingerprint_files, record_command, RunLayout, RunRecord};

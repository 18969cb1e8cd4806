//! Inference: guided iterative decoding, residual completion and export.

pub mod decode;
pub mod export;
pub mod guidance;
pub mod schedule;

pub use decode::{
    GenerationRequest, GenerationResult, Generator, LengthMode, StepTrace, DEFAULT_DECODE_STEPS, DEFAULT_GUIDANCE,
};
pub use export::{channel_names, export_generation, write_motion_csv, GenerationSidecar};
pub use guidance::{guided_fuse, guided_fuse_tensor};
pub use schedule::{fixed_per_step, remaining_masked};

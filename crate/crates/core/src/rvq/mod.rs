//! Residual vector-quantized motion codec.

pub mod codebook;
pub mod codec;
pub mod config;
pub mod latent;
pub mod loss;
pub mod quantize;
pub mod train;

pub use codebook::{CodebookLayer, LayeredCodebook, ResetPolicy};
pub use codec::{CodecConfig, MotionCodec};
pub use config::RvqConfig;
pub use latent::{CodeSequence, LatentSequence};
pub use loss::{rvq_loss, rvq_loss_tensor, straight_through};
pub use quantize::{dequantize_vector, quantize_nearest, residual_quantize, CodeTable, ResidualCodes};
pub use train::{code_usage, reconstruction_report, train_rvq, ReconstructionReport, RvqCheckpoint};

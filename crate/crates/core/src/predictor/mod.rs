//! Stage two: conditioning signals, the masked variational code predictor,
//! its losses and training.

pub mod config;
pub mod length;
pub mod loss;
pub mod model;
pub mod signal;
pub mod tokens;
pub mod train;

pub use config::PredictorConfig;
pub use length::{LengthBuckets, LengthPredictor};
pub use loss::{kl_loss, masked_nll, MaskedNll};
pub use model::{reparameterize, FusionFeature, PredictorModel, TokenBatch};
pub use signal::{sample_noise_signal, SignalFeature, SignalKind};
pub use tokens::{CodeDistribution, LatentGaussian, Token, TokenState};
pub use train::{heldout_nll, mask_count, train_predictor, HeldOutNll, PredictorCheckpoint, TrainStats};

//! Synthetic paired caption/motion corpus.

pub mod attrs;
pub mod augment;
pub mod caption;
pub mod corpus;
pub mod format;
pub mod motion;
pub mod render;

pub use attrs::{DescribedMask, Direction, Gait, MotionAttributes, Posture, Speed};
pub use augment::{length_augment, time_scale, DEFAULT_SCALE_RANGE};
pub use caption::{caption_of, generic_caption, CaptionTokens, VOCAB_SIZE};
pub use corpus::{generate_corpus, CorpusSpec, Dataset, Sample};
pub use format::{read_dataset, write_dataset};
pub use motion::MotionSequence;
pub use render::{ChannelMap, MotionRenderer};

//! Small neural-network toolkit on top of the tensor backend.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedArray};
pub use layers::{log_softmax, softmax, Conv1d, Embedding, LayerNorm, Linear, SelfAttention, TransformerBlock};
pub use optim::Adam;
pub use params::ParamStore;

/// Copy a tensor out as a flat f32 vector.
pub fn to_vec(t: &candle_core::Tensor) -> crate::Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_vec1::<f32>()?)
}

//! Dense networks, hand-written backward passes, Adam, and time embeddings.

mod adam;
pub mod checkpoint;
mod embedding;
mod layers;
mod tensor;
mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use embedding::{time_embedding, time_embedding_batch};
pub use layers::{silu, Activation, ActivationRecord, Backward, Dense, DenseNet, ParamGrads, Parameterized};
pub use tensor::Tensor;
pub use unet::{DenseUNet, UNetTape};

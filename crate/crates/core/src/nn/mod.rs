//! Network building blocks and the variational encoder-decoder.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use layers::Tensor;
pub use model::{image_batch, reparameterize, ArchConfig, EncoderOutput, ForwardOutput, Mode, Noise, Ved};
pub use scalar::Real;

//! Hand-written f32 neural-network engine, the autoencoder architectures and
//! every loss term.

mod adam;
mod blocks;
mod checkpoint;
mod config;
pub(crate) mod gemm;
pub mod layers;
mod losses;
mod model;
mod param;
mod tensor;

pub use adam::{Adam, CosineSchedule};
pub use blocks::ConvNextBlock;
pub use checkpoint::{Checkpoint, CheckpointHeader, EpochRecord, LatentBounds, NormStats, CHECKPOINT_VERSION};
pub use config::{Family, ModelConfig, LATENT_GRID, MAX_SPHERICAL_VARIATIONAL_DIM};
pub use losses::{
    kl_gaussian_standard, kl_gaussian_standard_grad, masked_reconstruction_grad, masked_reconstruction_loss,
    masked_sse_per_item, reparameterize_gaussian, spread_loss, spread_loss_grad, LossBreakdown, BORDER, FRAME,
};
pub use model::{Decoder, Encoder, ForwardOutput, LatentHeadOutput, Model};
pub use param::{HasParams, Param};
pub use tensor::Tensor;

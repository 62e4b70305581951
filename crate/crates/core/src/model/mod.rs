//! The 1D U-net used for lead reconstruction.

pub mod layers;
pub mod unet;

pub use layers::ParamRef;
pub use unet::{StageShape, UNet, UNetConfig};

use crate::error::Result;

/// Builds a U-net for `config`, initialised from `seed`.
pub fn build_model(config: &UNetConfig, seed: u64) -> Result<UNet> {
    UNet::new(config.clone(), seed)
}

/// Total trainable scalars (weights, biases, batch-norm scale and shift).
pub fn count_parameters(model: &UNet) -> usize {
    model.num_params()
}

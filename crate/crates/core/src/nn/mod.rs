//! A small convolutional network toolkit with explicit backward passes.
//!
//! Layers read parameters from a [`ParamStore`] and accumulate gradients into
//! it; forward passes optionally return the caches their backward needs.

mod adam;
mod conv;
mod layers;
mod linear;
mod params;

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::Conv2d;
pub use layers::{
    instance_norm, instance_norm_backward, upsample2, upsample2_backward, Act, BlockCache,
    ConvBlock, INSTANCE_NORM_EPS,
};
pub use linear::Linear;
pub use params::{ParamId, ParamStore};

//! Appearance-invariant long-term visual localization.
//!
//! A CycleGAN translator is trained across environmental conditions; channel-
//! summed activations of its encoder ("fusion maps") serve as appearance-
//! invariant features for SSIM-based place recognition and as inputs to a
//! 6-DoF pose regressor.

pub mod cli;
pub mod config;
pub mod container;
pub mod cyclegan;
pub mod datasets;
pub mod error;
pub mod features;
pub mod geometry;
pub mod nn;
pub mod placerec;
pub mod plot;
pub mod posereg;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

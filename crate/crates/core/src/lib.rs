pub mod deblur;
pub mod degrade;
pub mod devo;
pub mod enhance;
pub mod error;
pub mod imagekit;
mod io_util;
pub mod noisefield;
pub mod pipeline;
pub mod scalar;
pub mod splatter;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ImageF32 = imagekit::Image<f32>;
pub type ImageF64 = imagekit::Image<f64>;
pub type CameraF32 = splatter::Camera<f32>;
pub type CameraF64 = splatter::Camera<f64>;
pub type CloudF32 = splatter::GaussianCloud<f32>;
pub type CloudF64 = splatter::GaussianCloud<f64>;
pub type NoiseMlpF32 = noisefield::NoiseMlp<f32>;
pub type NoiseMlpF64 = noisefield::NoiseMlp<f64>;
pub type CheckpointF32 = trainer::Checkpoint<f32>;
pub type CheckpointF64 = trainer::Checkpoint<f64>;

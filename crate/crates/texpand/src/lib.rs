//! Adversarial texture expansion: train a fully-convolutional generator to
//! double a texture block, then use it to expand, diversify and transfer
//! textures at inference time.

pub mod discriminator;
pub mod error;
pub mod generator;
pub mod image;
pub mod losses;
pub mod nn;
pub mod noise;
pub mod rf;
pub mod sampler;
pub mod synthesis;
pub mod trainer;
pub mod vgg;
pub mod weights;

pub use error::{Error, Result};
pub use image::ImagePlane;

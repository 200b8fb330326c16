//! Automated organ segmentation for whole-body rodent cross-section
//! images: anatomical-prior bounding-box search, pixel color filtering,
//! convolutional shape recognition and mask extraction, verified against
//! a built-in synthetic phantom generator with exact ground truth.

pub mod anatomy;
pub mod chroma;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod shapenet;

mod linear;

pub use error::{Error, Result};

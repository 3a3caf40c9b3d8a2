//! Rooftop solar potential analysis from satellite imagery.

pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod pipeline;
pub mod placement;
pub mod edges;
pub mod raster;
pub mod regionseg;
pub mod tiles;
pub mod texture;

pub use error::{Error, Result};

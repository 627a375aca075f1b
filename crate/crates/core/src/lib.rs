//! Pinning of fractional semilinear interfaces in random obstacle fields.

pub mod error;
pub mod evolution;
pub mod fraclap;
pub mod grid;
pub mod kernels;
pub mod lifting;
pub mod obstacles;
pub mod percolation;
pub mod quad;
pub mod rng;
pub mod scaling;
pub mod special;
pub mod spectral;
pub mod supersolution;

pub use error::{Error, Result};

//! Poisson and rectified-Gaussian variational autoencoders for natural
//! image patches, trained by minimizing a beta-weighted free energy.

pub mod check;
pub mod data;
pub mod error;
mod io_util;
pub mod math_dists;
pub mod metrics;
pub mod model;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};

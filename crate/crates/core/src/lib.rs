#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod appearance;
pub mod autodiff;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod heat;
pub mod image;
pub mod loss;
pub mod math;
pub mod model;
pub mod nn;
pub mod radiation;
pub mod raster;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};

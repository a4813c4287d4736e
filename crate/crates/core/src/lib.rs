pub mod circuit;
pub mod error;
pub mod error_model;
pub mod inference;
pub mod mapping;
pub mod remap;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod tech;

pub use error::{Error, Result};

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod downstream;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

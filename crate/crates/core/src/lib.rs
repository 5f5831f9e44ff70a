pub mod cli;
pub mod corpus;
pub mod error;
pub mod game;
pub mod model;
pub mod tensor;
pub mod tmath;
pub mod train;

pub use error::{Error, Result};

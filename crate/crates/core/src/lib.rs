pub mod audio;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};

pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod length;
pub mod model;
pub mod nar;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Attention-based neural machine translation with an interactive source
//! memory, on a small reverse-mode autodiff tape.

pub mod attention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod memory;
pub mod model;
pub mod nn;
pub mod params;
pub mod search;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelParams, Variant};

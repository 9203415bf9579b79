//! Learned compressive codec for pairs of visualization images.

pub mod codec;
pub mod data;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod networks;
pub mod training;

pub use error::{FcnrError, Result};

pub mod baf;
pub mod codec;
pub mod error;
pub mod harness;
pub mod quant;
pub mod select;
pub mod tensor;

pub use error::{Error, Result};

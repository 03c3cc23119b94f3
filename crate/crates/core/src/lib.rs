//! Teacher-student knowledge distillation for point-cloud classification.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{ReduceKind, Tape, Var};
pub use tensor::Tensor;

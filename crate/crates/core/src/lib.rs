#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod iafa;
pub mod targets;
pub mod tensor;

pub use error::{Error, Result};

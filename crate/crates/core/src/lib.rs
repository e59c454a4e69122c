//! Linear embedding switches for conditioning language models.

// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enumerate;
pub mod error;
pub mod hmm;
pub mod interpret;
pub mod linalg;
pub mod lm;
pub mod optim;
pub mod persist;
pub mod search;
pub mod switch;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, Result};

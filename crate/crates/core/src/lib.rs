//! Semantic Monte Carlo localization for quasi-static 2-D indoor worlds.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod depth;
pub mod error;
pub mod eval;
pub mod filter;
pub mod semantic;
pub mod sim;
pub mod world;

pub use error::{Error, Result};

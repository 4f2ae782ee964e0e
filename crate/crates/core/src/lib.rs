#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod adversary;
pub mod cli;
pub mod engine;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod monitor;
pub mod objective;
pub mod par;
pub mod weights;

pub use error::{Error, Result};

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod envs;
pub mod harness;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod mig;
pub mod policies;
pub mod qff;
pub mod wgp;

pub use error::{Error, Result};

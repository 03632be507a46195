// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diffusion;
pub mod error;
pub mod fusion;
pub mod infotheory;
pub mod leadlag;
pub mod market_data;
pub mod neural;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

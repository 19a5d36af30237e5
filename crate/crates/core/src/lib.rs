// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod boxset;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod toydetect;
pub mod volume;

pub use error::{Error, Result};

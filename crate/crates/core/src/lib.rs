//! Fully quantized, table-based neural units.
//!
//! The pipeline is: fold normalization into weight layers ([`fold`]), build
//! weight and activation codebooks ([`codebook`]), construct the inference
//! tables ([`tables`], [`quantized`]) and run integer-only inference with
//! either the product-LUT engine ([`engine_lut`]) or the octave/octave
//! log-domain engine ([`engine_log`]). [`metrics`] reports per-unit and
//! network-wide table complexity, and [`train`] contains a small
//! quantization-aware trainer for toy problems.

pub mod cli;
pub mod codebook;
mod container;
pub mod engine_log;
pub mod engine_lut;
mod error;
pub mod fold;
pub mod metrics;
pub mod model;
pub mod quantized;
pub mod tables;
pub mod train;
pub(crate) mod util;

pub use error::{Error, Result};

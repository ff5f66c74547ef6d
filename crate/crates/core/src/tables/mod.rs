//! The three inference tables of a LUT neural unit (product LUT, activation
//! table, packed weight indices) and the integer bias terms.

mod activation;
mod lut;
mod packing;

pub use activation::{build_activation_table, ActivationTable};
pub use lut::{declared_entry_bits, octave_shift, ExtraRow, LutLayout, ProductLut};
pub use packing::{index_bits, pack_weight_indices, packed_byte_len, unpack_weight_indices, PackedIndices};

use crate::codebook::Codebook;
use crate::util::round_half_away;
use crate::{Error, Result};

/// Snap each bias to its nearest weight level and scale to accumulator units:
/// `round(2^s/Δx · b_i)`.
pub fn quantize_bias_terms(bias: &[f64], weight_cb: &Codebook, s: u32, dx: f64) -> Result<Vec<i64>> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::Table(format!("Δx must be positive, got {dx}")));
    }
    let scale = (s as f64).exp2() / dx;
    bias.iter()
        .map(|&b| {
            if !b.is_finite() {
                return Err(Error::Table("non-finite bias".into()));
            }
            Ok(round_half_away(scale * weight_cb.nearest(b)))
        })
        .collect()
}

/// Bias terms for values that already are codebook levels (no snapping).
pub fn bias_terms_exact(levels: &[f64], s: u32, dx: f64) -> Vec<i64> {
    let scale = (s as f64).exp2() / dx;
    levels.iter().map(|&b| round_half_away(scale * b)).collect()
}

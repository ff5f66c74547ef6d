use serde::{Deserialize, Serialize};

use crate::util::ceil_log2;
use crate::{Error, Result};

/// Fixed-width index stream, LSB-first within little-endian bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedIndices {
    pub bits: u32,
    pub len: usize,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

pub fn index_bits(n_w: usize) -> u32 {
    ceil_log2(n_w as u64)
}

pub fn packed_byte_len(len: usize, bits: u32) -> usize {
    (len * bits as usize).div_ceil(8)
}

pub fn pack_weight_indices(indices: &[u32], n_w: usize) -> Result<PackedIndices> {
    let bits = index_bits(n_w);
    let mut bytes = vec![0u8; packed_byte_len(indices.len(), bits)];
    let mut pos = 0usize;
    for (i, &v) in indices.iter().enumerate() {
        if v as usize >= n_w {
            return Err(Error::Table(format!("index {v} at position {i} is not below N_w = {n_w}")));
        }
        for b in 0..bits {
            if (v >> b) & 1 == 1 {
                bytes[pos >> 3] |= 1 << (pos & 7);
            }
            pos += 1;
        }
    }
    Ok(PackedIndices {
        bits,
        len: indices.len(),
        bytes,
    })
}

impl PackedIndices {
    pub fn from_bytes(bits: u32, len: usize, bytes: Vec<u8>) -> Result<Self> {
        if bits > 32 {
            return Err(Error::Table(format!("index width {bits} exceeds 32 bits")));
        }
        let want = packed_byte_len(len, bits);
        if bytes.len() != want {
            return Err(Error::Table(format!("packed stream has {} bytes, expected {want}", bytes.len())));
        }
        Ok(PackedIndices { bits, len, bytes })
    }

    #[inline]
    pub fn get(&self, i: usize) -> u32 {
        let start = i * self.bits as usize;
        let mut v = 0u32;
        for (b, pos) in (start..start + self.bits as usize).enumerate() {
            v |= (((self.bytes[pos >> 3] >> (pos & 7)) & 1) as u32) << b;
        }
        v
    }

    pub fn unpack(&self) -> Vec<u32> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

pub fn unpack_weight_indices(packed: &PackedIndices) -> Vec<u32> {
    packed.unpack()
}

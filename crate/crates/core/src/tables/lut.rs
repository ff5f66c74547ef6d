use serde::{Deserialize, Serialize};

use crate::codebook::OctaveCodebook;
use crate::util::{ceil_log2, round_half_away};
use crate::{Error, Result};

/// Row organisation of a product LUT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum LutLayout {
    /// One row per weight level.
    Full,
    /// One row per within-octave step `n` at octave 0. The product for octave
    /// `k` is the row entry shifted right by `k` (rounded) and negated for
    /// negative weights.
    Octave { n_q: u32, n_o: u32, k_max_exp: i32 },
}

/// Purpose of a row appended after the weight rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExtraRow {
    /// `w = 1` readout row, present when 1.0 has no weight row of its own.
    Readout,
    /// Constant scale, e.g. `1/size` for average pooling.
    Scale { value: f64 },
}

/// Doubly-indexed table of `round(2^s/Δx · w_i · a_j)`, rows by weight,
/// columns by input activation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductLut {
    #[serde(flatten)]
    pub layout: LutLayout,
    /// Weight (or octave-step) rows, not counting `extra`.
    pub rows: usize,
    pub cols: usize,
    pub s: u32,
    pub dx: f64,
    pub extra: Vec<ExtraRow>,
    #[serde(skip)]
    pub entries: Vec<i32>,
}

/// Declared magnitude width of a LUT entry: `s + ⌈log₂ N_x⌉` bits plus sign.
pub fn declared_entry_bits(s: u32, n_x: usize) -> u32 {
    s + ceil_log2(n_x as u64)
}

fn entry(scale: f64, w: f64, a: f64, max_bits: u32, at: (usize, usize)) -> Result<i32> {
    let v = round_half_away(scale * w * a);
    let limit = 1i64 << max_bits.min(31);
    if v >= limit || v <= -limit {
        return Err(Error::Table(format!(
            "LUT entry ({}, {}) = {v} does not fit {max_bits} bits plus sign",
            at.0, at.1
        )));
    }
    Ok(v as i32)
}

fn check_params(s: u32, dx: f64) -> Result<f64> {
    if s == 0 || s > 30 {
        return Err(Error::Table(format!("shift s must be in 1..=30, got {s}")));
    }
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::Table(format!("Δx must be positive, got {dx}")));
    }
    Ok((s as f64).exp2() / dx)
}

fn fill_rows(rows: &[f64], acts: &[f64], scale: f64, max_bits: u32, row0: usize, out: &mut Vec<i32>) -> Result<()> {
    for (i, &w) in rows.iter().enumerate() {
        for (j, &a) in acts.iter().enumerate() {
            out.push(entry(scale, w, a, max_bits, (row0 + i, j))?);
        }
    }
    Ok(())
}

impl ProductLut {
    /// One row per weight level; a readout row is appended when 1.0 is not a level.
    pub fn build_full(weights: &[f64], acts: &[f64], s: u32, dx: f64, max_bits: u32) -> Result<Self> {
        let scale = check_params(s, dx)?;
        let mut entries = Vec::with_capacity((weights.len() + 1) * acts.len());
        fill_rows(weights, acts, scale, max_bits, 0, &mut entries)?;
        let mut extra = Vec::new();
        if !weights.contains(&1.0) {
            fill_rows(&[1.0], acts, scale, max_bits, weights.len(), &mut entries)?;
            extra.push(ExtraRow::Readout);
        }
        Ok(ProductLut {
            layout: LutLayout::Full,
            rows: weights.len(),
            cols: acts.len(),
            s,
            dx,
            extra,
            entries,
        })
    }

    /// `N_q` rows of `K_max · 2^{-n/N_q}` plus an explicit readout row.
    pub fn build_octave(cb: &OctaveCodebook, acts: &[f64], s: u32, dx: f64, max_bits: u32) -> Result<Self> {
        let scale = check_params(s, dx)?;
        let base: Vec<f64> = (1..=cb.n_q)
            .map(|n| cb.k_max() * (-(n as f64) / cb.n_q as f64).exp2())
            .collect();
        let mut entries = Vec::with_capacity((base.len() + 1) * acts.len());
        fill_rows(&base, acts, scale, max_bits, 0, &mut entries)?;
        fill_rows(&[1.0], acts, scale, max_bits, base.len(), &mut entries)?;
        Ok(ProductLut {
            layout: LutLayout::Octave {
                n_q: cb.n_q,
                n_o: cb.n_o,
                k_max_exp: cb.k_max_exp,
            },
            rows: base.len(),
            cols: acts.len(),
            s,
            dx,
            extra: vec![ExtraRow::Readout],
            entries,
        })
    }

    /// Append a constant-scale row; returns its row index.
    pub fn add_scale_row(&mut self, value: f64, acts: &[f64], max_bits: u32) -> Result<usize> {
        if acts.len() != self.cols {
            return Err(Error::Table(format!("{} activation levels for a {}-column LUT", acts.len(), self.cols)));
        }
        let scale = check_params(self.s, self.dx)?;
        let row = self.total_rows();
        fill_rows(&[value], acts, scale, max_bits, row, &mut self.entries)?;
        self.extra.push(ExtraRow::Scale { value });
        Ok(row)
    }

    pub fn total_rows(&self) -> usize {
        self.rows + self.extra.len()
    }

    /// Number of weight-by-activation products the table holds.
    pub fn product_entries(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[i32] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    /// Row index holding `w = 1`.
    pub fn readout_row(&self, one_index: Option<usize>) -> Option<usize> {
        match (self.layout, one_index) {
            (LutLayout::Full, Some(i)) => Some(i),
            _ => self
                .extra
                .iter()
                .position(|e| matches!(e, ExtraRow::Readout))
                .map(|p| self.rows + p),
        }
    }

    pub fn check_entry_count(&self) -> Result<()> {
        if self.entries.len() != self.total_rows() * self.cols {
            return Err(Error::Table(format!(
                "LUT has {} entries, expected {}",
                self.entries.len(),
                self.total_rows() * self.cols
            )));
        }
        Ok(())
    }

    /// Serialized size of the entry section.
    pub fn byte_len(&self) -> usize {
        self.entries.len() * 4
    }
}

/// `round(entry · 2^{-k})` using only an add and an arithmetic shift.
#[inline]
pub fn octave_shift(entry: i32, k: u32) -> i64 {
    if k == 0 {
        entry as i64
    } else {
        (entry as i64 + (1i64 << (k - 1))) >> k
    }
}

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::model::Activation;
use crate::{Error, Result};

/// Search limit when locating the saturated ends of the table.
const MAX_SPAN: i64 = 1 << 22;

/// Maps the shifted accumulator `k` (pre-activation `k·Δx`) to the index of
/// the level nearest `Γ(k·Δx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTable {
    pub activation: Activation,
    pub dx: f64,
    /// Smallest `k` covered; `k0 = -k_lo` is the position of `x = 0`.
    pub k_lo: i64,
    #[serde(skip)]
    pub entries: Vec<u16>,
}

pub fn build_activation_table(act: Activation, cb: &Codebook, dx: f64) -> Result<ActivationTable> {
    if act.bounds().is_none() {
        return Err(Error::Table(format!("activation table needs a bounded activation, got {act:?}")));
    }
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::Table(format!("Δx must be positive, got {dx}")));
    }
    if cb.len() > u16::MAX as usize + 1 {
        return Err(Error::Table(format!("{} activation levels do not fit 16-bit entries", cb.len())));
    }
    let top = cb.len() - 1;
    let idx = |k: i64| cb.nearest_index(act.apply(k as f64 * dx));
    let k_lo = if idx(0) == 0 {
        let mut k = 0;
        while idx(k + 1) == 0 {
            k += 1;
            if k > MAX_SPAN {
                return Err(Error::Table("activation never leaves its lowest level".into()));
            }
        }
        k
    } else {
        let mut k = 0;
        while idx(k) != 0 {
            k -= 1;
            if k < -MAX_SPAN {
                return Err(Error::Table("activation never reaches its lowest level".into()));
            }
        }
        k
    };
    let mut k_hi = k_lo.max(0);
    while idx(k_hi) != top {
        k_hi += 1;
        if k_hi - k_lo > MAX_SPAN {
            return Err(Error::Table("activation never reaches its highest level".into()));
        }
    }
    let entries = (k_lo..=k_hi).map(|k| idx(k) as u16).collect();
    Ok(ActivationTable {
        activation: act,
        dx,
        k_lo,
        entries,
    })
}

impl ActivationTable {
    pub fn n_x(&self) -> usize {
        self.entries.len()
    }

    pub fn k0(&self) -> i64 {
        -self.k_lo
    }

    #[inline]
    pub fn lookup(&self, k: i64) -> u16 {
        let last = self.entries.len() as i64 - 1;
        let mut p = k - self.k_lo;
        if p < 0 {
            p = 0;
        }
        if p > last {
            p = last;
        }
        self.entries[p as usize]
    }

    /// Pre-activation span `[k_lo·Δx, k_hi·Δx]`.
    pub fn span(&self) -> (f64, f64) {
        (self.k_lo as f64 * self.dx, (self.k_lo + self.n_x() as i64 - 1) as f64 * self.dx)
    }

    pub fn from_parts(activation: Activation, dx: f64, k_lo: i64, entries: Vec<u16>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Table("empty activation table".into()));
        }
        if entries.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Table("activation table must be non-decreasing".into()));
        }
        Ok(ActivationTable {
            activation,
            dx,
            k_lo,
            entries,
        })
    }
}

//! Multiply-free octave/octave inference.
//!
//! Weights and activations are held as a sign plus a log index
//! `v = round(N_q · log2|x|)`. A product is an index addition after scaling
//! both operands to the finer resolution, the sum runs in 64-bit fixed point
//! through `T_q`, and the result goes back to the log domain through a
//! leading-zero count and `T_q⁻¹`.

mod engine;
mod model;
pub mod nlz;
mod tables;

pub use engine::{forward_reference_log, LogEngine, LogTrace, StreamOrder};
pub use model::{quantize_log_model, LogConfig, LogLayer, LogQuantModel, LOGQ_MAGIC, LOGQ_VERSION, MIN_HEADROOM_BITS};
pub use nlz::{nlz, nlz64};
pub use tables::{LogTables, MIN_TQ_BITS};

use serde::{Deserialize, Serialize};

use crate::util::round_half_away;
use crate::{Error, Result};

/// `sign · 2^{index / N_q}`; `sign == 0` is exact zero and ignores `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogValue {
    pub sign: i8,
    pub index: i32,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue { sign: 0, index: 0 };

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn value(self, n_q: u32) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            self.sign as f64 * (self.index as f64 / n_q as f64).exp2()
        }
    }
}

/// Log-spaced levels `2^{top_exp - j/N_q}`, `1 <= j <= N_q · N_o`, plus zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogGrid {
    pub n_q: u32,
    pub n_o: u32,
    pub top_exp: i32,
}

impl LogGrid {
    pub fn new(n_q: u32, n_o: u32, top_exp: i32) -> Result<Self> {
        if n_q == 0 || n_o == 0 {
            return Err(Error::InvalidParam("log grid needs N_q >= 1 and N_o >= 1".into()));
        }
        Ok(LogGrid { n_q, n_o, top_exp })
    }

    /// Largest index on the grid.
    pub fn top(&self) -> i32 {
        self.n_q as i32 * self.top_exp - 1
    }

    /// Smallest index on the grid.
    pub fn bottom(&self) -> i32 {
        self.n_q as i32 * (self.top_exp - self.n_o as i32)
    }

    /// Non-zero levels per sign.
    pub fn len(&self) -> usize {
        (self.n_q * self.n_o) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Every non-negative grid value: zero, then ascending magnitudes.
    pub fn levels(&self) -> Vec<LogValue> {
        let mut v = vec![LogValue::ZERO];
        v.extend((self.bottom()..=self.top()).map(|index| LogValue { sign: 1, index }));
        v
    }

    /// Nearest grid value in the log domain; magnitudes below the smallest
    /// level divided by `√2` become zero.
    pub fn encode(&self, x: f64) -> LogValue {
        if x == 0.0 || x.is_nan() {
            return LogValue::ZERO;
        }
        let t = self.n_q as f64 * x.abs().log2();
        if t < self.bottom() as f64 - 0.5 * self.n_q as f64 {
            return LogValue::ZERO;
        }
        let index = if t.is_finite() {
            (round_half_away(t).clamp(self.bottom() as i64, self.top() as i64)) as i32
        } else {
            self.top()
        };
        LogValue {
            sign: if x < 0.0 { -1 } else { 1 },
            index,
        }
    }

    /// Map an integer index at this grid's resolution onto the grid with
    /// the same zero threshold as [`LogGrid::encode`].
    pub fn clamp(&self, v: LogValue) -> LogValue {
        if v.sign == 0 || 2 * (v.index as i64) < 2 * (self.bottom() as i64) - self.n_q as i64 {
            return LogValue::ZERO;
        }
        LogValue {
            sign: v.sign,
            index: v.index.clamp(self.bottom(), self.top()),
        }
    }

    pub fn contains(&self, v: LogValue) -> bool {
        v.sign == 0 || (v.sign.abs() == 1 && (self.bottom()..=self.top()).contains(&v.index))
    }
}

/// Standalone encoding at resolution `n_q` with the grid spanning `n_o`
/// octaves below `2^s_max_exp`.
pub fn encode_log(x: f64, n_q: u32, n_o: u32, s_max_exp: i32) -> Result<LogValue> {
    Ok(LogGrid::new(n_q, n_o, s_max_exp)?.encode(x))
}

/// Product of a weight at `N_{q;w}` and an activation at `N_{q;a}`, at the
/// product resolution `max(N_{q;w}, N_{q;a})`: sign product and shifted
/// index addition.
#[inline]
pub fn log_multiply(w: LogValue, a: LogValue, tables: &LogTables) -> LogValue {
    let sign = w.sign * a.sign;
    if sign == 0 {
        return LogValue::ZERO;
    }
    LogValue {
        sign,
        index: tables.weight_to_product(w.index) + tables.act_to_product(a.index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let g = LogGrid::new(4, 8, 4).unwrap();
        assert_eq!(g.encode(1.0), LogValue { sign: 1, index: 0 });
        assert_eq!(g.encode(-8.0), LogValue { sign: -1, index: 12 });
        assert_eq!(g.encode(0.0), LogValue::ZERO);
        assert_eq!(g.encode(1e9).index, g.top());
    }

    #[test]
    fn zero_threshold() {
        let g = LogGrid::new(2, 1, 0).unwrap();
        // levels 2^{-1/2}, 2^{-1}; zero below 2^{-1}/sqrt(2) = 2^{-3/2}
        assert_eq!(g.bottom(), -2);
        assert!(g.encode(0.35).is_zero());
        assert_eq!(g.encode(0.36).index, -2);
        assert!(g.clamp(LogValue { sign: 1, index: -4 }).is_zero());
        assert_eq!(g.clamp(LogValue { sign: 1, index: -3 }).index, -2);
    }

    #[test]
    fn multiply_examples() {
        let t = LogTables::new(2, 8, 3, 3).unwrap();
        let w = LogValue { sign: 1, index: 3 };
        let a = LogValue { sign: 1, index: 5 };
        assert_eq!(log_multiply(w, a, &t).index, 17);
        let one = LogValue { sign: 1, index: 0 };
        assert_eq!(log_multiply(one, a, &t), a);
        assert!(log_multiply(LogValue::ZERO, a, &t).is_zero());
        assert_eq!(log_multiply(LogValue { sign: -1, index: 0 }, a, &t).sign, -1);
    }
}

//! The log-to-linear table `T_q` and the linear-to-log table `T_q⁻¹`.
//!
//! Fixed-point values carry `F = N_{o;a} + B` fractional bits relative to
//! `S_max`, so the integer `X` stands for `X · S_max · 2^{-F}` and the lowest
//! activation octave keeps `B` bits of mantissa.

use serde::{Deserialize, Serialize};

use super::nlz::nlz64;
use super::LogValue;
use crate::util::round_half_away;
use crate::{Error, Result};

/// Minimum mantissa precision of `T_q`.
pub const MIN_TQ_BITS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTables {
    pub n_qa: u32,
    pub n_qw: u32,
    /// Product resolution `max(N_{q;w}, N_{q;a})`.
    pub n_qp: u32,
    pub n_oa: u32,
    /// `S_max = 2^s_exp`.
    pub s_exp: i32,
    /// `T_q` fractional bits.
    pub b: u32,
    /// Mantissa bits consumed by `T_q⁻¹`.
    pub m: u32,
    #[serde(skip)]
    pub t_q: Vec<u64>,
    #[serde(skip)]
    pub t_q_inv: Vec<u32>,
}

fn log2_exact(n: u32, what: &str) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Engine(format!("{what} = {n} must be a power of two")));
    }
    Ok(n.trailing_zeros())
}

impl LogTables {
    pub fn new(n_qw: u32, n_qa: u32, n_oa: u32, s_exp: i32) -> Result<Self> {
        log2_exact(n_qw, "N_q;w")?;
        log2_exact(n_qa, "N_q;a")?;
        if n_oa == 0 {
            return Err(Error::Engine("N_o;a must be at least 1".into()));
        }
        let n_qp = n_qw.max(n_qa);
        let m = log2_exact(4 * n_qa, "4 N_q;a")?;
        let m_p = log2_exact(4 * n_qp, "4 N_qp")?;
        let b = MIN_TQ_BITS.max(m_p + 3);
        let t_q = (0..n_qp)
            .map(|i| round_half_away((i as f64 / n_qp as f64).exp2() * (b as f64).exp2()) as u64)
            .collect();
        let bins = 1u32 << m;
        let t_q_inv = (0..bins)
            .map(|j| round_half_away(n_qa as f64 * (1.0 + (j as f64 + 0.5) / bins as f64).log2()) as u32)
            .collect();
        Ok(LogTables {
            n_qa,
            n_qw,
            n_qp,
            n_oa,
            s_exp,
            b,
            m,
            t_q,
            t_q_inv,
        })
    }

    pub fn from_parts(mut meta: LogTables, t_q: Vec<u64>, t_q_inv: Vec<u32>) -> Result<Self> {
        let fresh = LogTables::new(meta.n_qw, meta.n_qa, meta.n_oa, meta.s_exp)?;
        if fresh.b != meta.b || fresh.m != meta.m || fresh.n_qp != meta.n_qp {
            return Err(Error::Engine("log table parameters are inconsistent".into()));
        }
        if t_q.len() != fresh.t_q.len() || t_q_inv.len() != fresh.t_q_inv.len() {
            return Err(Error::Engine("log table sizes do not match their parameters".into()));
        }
        meta.t_q = t_q;
        meta.t_q_inv = t_q_inv;
        Ok(meta)
    }

    pub fn frac_bits(&self) -> u32 {
        self.n_oa + self.b
    }

    /// Total entries across both tables.
    pub fn entries(&self) -> usize {
        self.t_q.len() + self.t_q_inv.len()
    }

    #[inline]
    fn qp_shift(&self) -> u32 {
        self.n_qp.trailing_zeros()
    }

    #[inline]
    fn qa_shift(&self) -> u32 {
        self.n_qa.trailing_zeros()
    }

    /// Fixed-point magnitude of `2^{v/N_qp}`: mask, shift and one table read.
    #[inline]
    pub fn magnitude(&self, v: i32) -> i64 {
        let i = (v & (self.n_qp as i32 - 1)) as usize;
        let o = v >> self.qp_shift();
        let sh = o - self.s_exp + self.n_oa as i32;
        let t = self.t_q[i];
        if sh >= 0 {
            (t << sh) as i64
        } else if sh > -64 {
            (t >> -sh) as i64
        } else {
            0
        }
    }

    /// Signed fixed-point value of a product-resolution log value.
    #[inline]
    pub fn log_to_linear(&self, x: LogValue) -> i64 {
        match x.sign {
            0 => 0,
            s if s < 0 => -self.magnitude(x.index),
            _ => self.magnitude(x.index),
        }
    }

    /// Log index (at `N_{q;a}` resolution) of a fixed-point accumulator:
    /// the octave from the leading one, the within-octave step from the
    /// `m` bits below it. Grid clamping is left to the caller.
    #[inline]
    pub fn linear_to_log(&self, acc: i64) -> LogValue {
        if acc == 0 {
            return LogValue::ZERO;
        }
        let sign = if acc < 0 { -1 } else { 1 };
        let mag = acc.unsigned_abs();
        let p = 63 - nlz64(mag) as i32;
        let o_abs = p - self.frac_bits() as i32 + self.s_exp;
        let m = self.m as i32;
        let mask = (1u64 << m) - 1;
        let bits = if p >= m { (mag >> (p - m)) & mask } else { (mag << (m - p)) & mask };
        LogValue {
            sign,
            index: (o_abs << self.qa_shift()) + self.t_q_inv[bits as usize] as i32,
        }
    }

    /// Scale an activation-resolution index to product resolution.
    #[inline]
    pub fn act_to_product(&self, v: i32) -> i32 {
        v << (self.n_qp / self.n_qa).trailing_zeros()
    }

    #[inline]
    pub fn weight_to_product(&self, v: i32) -> i32 {
        v << (self.n_qp / self.n_qw).trailing_zeros()
    }

    /// Real value of a fixed-point integer.
    pub fn to_real(&self, acc: i64) -> f64 {
        acc as f64 * (self.s_exp as f64 - self.frac_bits() as f64).exp2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let t = LogTables::new(8, 32, 3, 3).unwrap();
        assert_eq!(t.t_q.len(), 32);
        assert_eq!(t.t_q_inv.len(), 128);
        assert_eq!(t.entries(), 32 + 4 * 32);
        assert!(LogTables::new(8, 24, 3, 3).is_err());
    }

    #[test]
    fn identity_and_octave_doubling() {
        let t = LogTables::new(8, 8, 3, 3).unwrap();
        let one = t.log_to_linear(LogValue { sign: 1, index: 0 });
        assert_eq!(one, 1i64 << (t.frac_bits() as i32 - 3));
        let two = t.log_to_linear(LogValue { sign: 1, index: 8 });
        assert_eq!(two, 2 * one);
        assert_eq!(t.log_to_linear(LogValue { sign: -1, index: 8 }), -two);
        assert!((t.to_real(one) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_symmetry() {
        let t = LogTables::new(16, 16, 4, 3).unwrap();
        for acc in [1i64, 7, 1000, 123_456_789, 1 << 40] {
            let a = t.linear_to_log(acc);
            let b = t.linear_to_log(-acc);
            assert_eq!(a.index, b.index);
            assert_eq!(a.sign, -b.sign);
        }
        assert_eq!(t.linear_to_log(0), LogValue::ZERO);
    }
}

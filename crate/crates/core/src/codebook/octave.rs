//! Log-spaced weight levels: `0` and `±K_max · 2^{-(k + n/N_q)}` for
//! `0 <= k < N_o`, `1 <= n <= N_q`.

use super::{Codebook, Scheme};
use crate::util::ceil_pow2_exp;
use crate::{Error, Result};

/// Sign, octave and within-octave step of a non-zero octave level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OctaveCode {
    pub neg: bool,
    /// Octave `0..N_o`.
    pub k: u32,
    /// Step `1..=N_q`.
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctaveCodebook {
    pub n_q: u32,
    pub n_o: u32,
    /// `K_max = 2^k_max_exp`.
    pub k_max_exp: i32,
    codebook: Codebook,
    cut_values: Vec<f64>,
}

pub fn octave_codebook(n_q: u32, n_o: u32, v_max: f64) -> Result<OctaveCodebook> {
    if !(v_max > 0.0 && v_max.is_finite()) {
        return Err(Error::Codebook(format!("v_max must be positive, got {v_max}")));
    }
    OctaveCodebook::with_exponent(n_q, n_o, ceil_pow2_exp(v_max))
}

impl OctaveCodebook {
    pub fn with_exponent(n_q: u32, n_o: u32, k_max_exp: i32) -> Result<Self> {
        if n_q == 0 || n_o == 0 {
            return Err(Error::Codebook("octave codebook needs N_q >= 1 and N_o >= 1".into()));
        }
        let m = n_q * n_o;
        let k_max = (k_max_exp as f64).exp2();
        let mag = |j: u32| k_max * (-(j as f64) / n_q as f64).exp2();
        let mut levels: Vec<f64> = (1..=m).map(|j| -mag(j)).collect();
        levels.push(0.0);
        levels.extend((1..=m).rev().map(mag));
        let cut_values = levels.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let codebook = Codebook::new(levels, Scheme::Octave { n_q, n_o, k_max_exp })?;
        Ok(OctaveCodebook {
            n_q,
            n_o,
            k_max_exp,
            codebook,
            cut_values,
        })
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn into_codebook(self) -> Codebook {
        self.codebook
    }

    pub fn cut_values(&self) -> &[f64] {
        &self.cut_values
    }

    pub fn k_max(&self) -> f64 {
        (self.k_max_exp as f64).exp2()
    }

    fn half(&self) -> usize {
        (self.n_q * self.n_o) as usize
    }

    pub fn zero_index(&self) -> usize {
        self.half()
    }

    /// Level index for `x` via the midpoint cuts; an exact cut goes away from zero.
    pub fn assign(&self, x: f64) -> usize {
        if x >= 0.0 {
            self.cut_values.partition_point(|&c| c <= x)
        } else {
            self.cut_values.partition_point(|&c| c < x)
        }
    }

    pub fn nearest(&self, x: f64) -> f64 {
        self.codebook.level(self.assign(x))
    }

    /// `None` for the zero level.
    pub fn code(&self, index: usize) -> Option<OctaveCode> {
        let m = self.half();
        let (neg, j) = match index.cmp(&m) {
            std::cmp::Ordering::Equal => return None,
            std::cmp::Ordering::Less => (true, index + 1),
            std::cmp::Ordering::Greater => (false, 2 * m + 1 - index),
        };
        let j = j as u32;
        let k = (j - 1) / self.n_q;
        Some(OctaveCode {
            neg,
            k,
            n: j - k * self.n_q,
        })
    }

    pub fn index_of_code(&self, code: OctaveCode) -> usize {
        let m = self.half();
        let j = (code.k * self.n_q + code.n) as usize;
        if code.neg {
            j - 1
        } else {
            2 * m + 1 - j
        }
    }
}

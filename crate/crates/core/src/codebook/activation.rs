use super::{Codebook, Scheme};
use crate::model::Activation;
use crate::util::ceil_pow2_exp;
use crate::{Error, Result};

/// `n_a` evenly spaced levels over the activation's output range, endpoints included.
pub fn uniform_linear_activations(n_a: usize, act: Activation) -> Result<Codebook> {
    let (lo, hi) = act
        .bounds()
        .ok_or_else(|| Error::Codebook("uniform activation levels need a bounded activation".into()))?;
    if n_a < 2 {
        return Err(Error::Codebook(format!("need at least 2 activation levels, got {n_a}")));
    }
    let step = (hi - lo) / (n_a - 1) as f64;
    let mut levels: Vec<f64> = (0..n_a).map(|j| lo + step * j as f64).collect();
    levels[n_a - 1] = hi;
    Codebook::new(levels, Scheme::UniformLinear { lo, hi })
}

/// Zero plus `n_q * n_o` log-spaced levels below `S_max`, the power of two at
/// or above the activation's maximum. Only non-negative activations qualify.
pub fn octave_activations(n_q: u32, n_o: u32, act: Activation) -> Result<Codebook> {
    let (lo, hi) = match act.bounds() {
        Some(b) => b,
        None => return Err(Error::Codebook("octave activation levels need a bounded activation".into())),
    };
    if lo < 0.0 {
        return Err(Error::Codebook(
            "octave activation levels are defined for non-negative activations only".into(),
        ));
    }
    if n_q == 0 || n_o == 0 {
        return Err(Error::Codebook("octave activations need N_q >= 1 and N_o >= 1".into()));
    }
    let s_max_exp = ceil_pow2_exp(hi);
    let s_max = (s_max_exp as f64).exp2();
    let mut levels = vec![0.0];
    levels.extend((1..=n_q * n_o).rev().map(|j| s_max * (-(j as f64) / n_q as f64).exp2()));
    Codebook::new(levels, Scheme::OctaveActivation { n_q, n_o, s_max_exp })
}

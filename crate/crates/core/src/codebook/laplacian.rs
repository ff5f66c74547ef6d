//! Level placement that equalizes expected error under a Laplacian weight
//! density: `L_i = L_{i-1} + Δ_i`, `Δ_i = -ln(1 - 2 e^{L_{i-1}} / N)`.

use super::{Codebook, Scheme};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianCenters {
    pub n: usize,
    /// `L_0 ..= L_{⌊N/2⌋}` in units of the density scale.
    pub l: Vec<f64>,
    /// `Δ_1 ..= Δ_{⌊N/2⌋}`.
    pub delta: Vec<f64>,
    /// Scale `b = W_max / L_{⌊N/2⌋}`.
    pub scale: f64,
    pub w_max: f64,
    /// Symmetric centers `±b·L_i` with 0, sorted.
    pub centers: Vec<f64>,
}

/// Run the recursion for `steps` steps, returning `(L, Δ)`.
fn recursion(n: usize, steps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nf = n as f64;
    let mut l = vec![0.0f64];
    let mut delta = Vec::with_capacity(steps);
    for i in 1..=steps {
        let arg = 1.0 - 2.0 * l[i - 1].exp() / nf;
        if arg <= 0.0 || !arg.is_finite() {
            return Err(Error::Codebook(format!(
                "Laplacian recursion leaves its domain at i = {i} (N = {n})"
            )));
        }
        let d = -arg.ln();
        delta.push(d);
        l.push(l[i - 1] + d);
    }
    Ok((l, delta))
}

/// Recursion steps `Δ_1..Δ_{⌊(N-1)/2⌋}` for any `N ≥ 3`, odd or even.
pub fn laplacian_deltas(n: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Codebook(format!("Laplacian centers need N >= 3, got {n}")));
    }
    Ok(recursion(n, (n - 1) / 2)?.1)
}

/// Centers for an odd level count `n`, scaled so the outermost center sits at `w_max`.
pub fn laplacian_centers(n: usize, w_max: f64) -> Result<LaplacianCenters> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(Error::Codebook(format!("Laplacian centers need odd N >= 3, got {n}")));
    }
    if !(w_max > 0.0 && w_max.is_finite()) {
        return Err(Error::Codebook(format!("W_max must be positive, got {w_max}")));
    }
    let half = n / 2;
    let (l, delta) = recursion(n, half)?;
    let scale = w_max / l[half];
    let mut centers: Vec<f64> = l[1..].iter().rev().map(|&v| -scale * v).collect();
    centers.push(0.0);
    centers.extend(l[1..].iter().map(|&v| scale * v));
    Ok(LaplacianCenters {
        n,
        l,
        delta,
        scale,
        w_max,
        centers,
    })
}

/// Mean magnitude of the `⌈N_net / N²⌉` largest-magnitude samples.
pub fn laplacian_w_max(samples: &[f64], n: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Codebook("W_max needs at least one sample".into()));
    }
    let n_net = samples.len() as u64;
    let nn = (n as u64).max(1).pow(2);
    let top = n_net.div_ceil(nn).max(1) as usize;
    let mut mags: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags[..top].iter().sum::<f64>() / top as f64)
}

/// Estimate `W_max` from the samples and build the weight codebook (1.0 inserted).
pub fn laplacian_codebook(samples: &[f64], n: usize) -> Result<Codebook> {
    let w_max = laplacian_w_max(samples, n)?;
    let c = laplacian_centers(n, w_max)?;
    Ok(Codebook::new(c.centers, Scheme::Laplacian { w_max, scale: c.scale })?.with_one())
}

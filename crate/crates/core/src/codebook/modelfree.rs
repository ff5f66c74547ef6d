//! Model-free quantization: bucket occupancies follow a fixed triangle and
//! weights are reassigned to buckets by rank, not by distance.

use serde::{Deserialize, Serialize};

use super::{Codebook, Scheme};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangleProfile {
    pub n_w: usize,
    pub n_net: u64,
    pub counts: Vec<u64>,
}

/// Discretize a symmetric triangle of base `N_w + 2` and area `N_net` onto
/// `N_w` unit bins, the outer bins taking the tails.
///
/// With `D = (N_w+2)^2` the exact bin masses are `(2N_w+3)/D` at the center,
/// `2(N_w+2-2d)/D` at distance `d`, and `8/D` for each outer bin. Non-center
/// bins are floored and the center takes the remainder.
pub fn triangle_profile(n_w: usize, n_net: u64) -> Result<TriangleProfile> {
    if n_w == 0 || n_w.is_multiple_of(2) {
        return Err(Error::Codebook(format!("triangle profile needs odd N_w, got {n_w}")));
    }
    if n_net < n_w as u64 {
        return Err(Error::Codebook(format!("N_net = {n_net} is smaller than N_w = {n_w}")));
    }
    if n_w == 1 {
        return Ok(TriangleProfile {
            n_w,
            n_net,
            counts: vec![n_net],
        });
    }
    let m = n_w / 2;
    let w = n_w as u128 + 2;
    let d = w * w;
    let mut counts = vec![0u64; n_w];
    let mut used = 0u64;
    for dist in 1..=m {
        let num = if dist == m { 8 } else { 2 * (w - 2 * dist as u128) };
        let c = (n_net as u128 * num / d) as u64;
        counts[m - dist] = c;
        counts[m + dist] = c;
        used += 2 * c;
    }
    counts[m] = n_net - used;
    Ok(TriangleProfile { n_w, n_net, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterMode {
    /// Bucket mean (minimizes squared error).
    #[default]
    Mean,
    /// Lower-middle element of the bucket (minimizes absolute error).
    Median,
}

/// Frozen per-scope state: occupancies, cut indices into the sorted values,
/// per-bucket centers and the sorted list of quantized values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFreeState {
    pub profile: TriangleProfile,
    /// Bucket `i` covers sorted positions `cuts[i]..cuts[i+1]`.
    pub cuts: Vec<usize>,
    /// `None` for buckets the profile leaves empty.
    pub centers: Vec<Option<f64>>,
    /// Value assigned to the element of rank `r`.
    pub sorted_values: Vec<f64>,
    pub mode: CenterMode,
}

impl ModelFreeState {
    pub fn n_net(&self) -> usize {
        self.sorted_values.len()
    }

    /// Distinct centers plus 1.0 (with zero occupancy when not a center).
    pub fn codebook(&self) -> Result<Codebook> {
        Ok(Codebook::from_values(self.centers.iter().flatten().copied(), Scheme::ModelFree)?.with_one())
    }
}

pub fn modelfree_init(values: &[f64], n_w: usize, mode: CenterMode) -> Result<ModelFreeState> {
    if values.len() < n_w {
        return Err(Error::Codebook(format!(
            "{} values cannot fill {n_w} model-free buckets",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Codebook("non-finite value".into()));
    }
    let profile = triangle_profile(n_w, values.len() as u64)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts = Vec::with_capacity(n_w + 1);
    cuts.push(0usize);
    for &c in &profile.counts {
        cuts.push(cuts.last().unwrap() + c as usize);
    }
    let mut centers = Vec::with_capacity(n_w);
    let mut sorted_values = Vec::with_capacity(sorted.len());
    for b in cuts.windows(2) {
        let bucket = &sorted[b[0]..b[1]];
        if bucket.is_empty() {
            centers.push(None);
            continue;
        }
        let c = match mode {
            CenterMode::Mean => bucket.iter().sum::<f64>() / bucket.len() as f64,
            CenterMode::Median => bucket[(bucket.len() - 1) / 2],
        };
        centers.push(Some(c));
        sorted_values.extend(std::iter::repeat_n(c, bucket.len()));
    }
    Ok(ModelFreeState {
        profile,
        cuts,
        centers,
        sorted_values,
        mode,
    })
}

/// Give the rank-`r` element of `tensor` the rank-`r` frozen value.
pub fn modelfree_requantize(tensor: &[f64], state: &ModelFreeState) -> Result<Vec<f64>> {
    if tensor.len() != state.n_net() {
        return Err(Error::Codebook(format!(
            "tensor has {} elements, frozen state expects {}",
            tensor.len(),
            state.n_net()
        )));
    }
    let mut order: Vec<usize> = (0..tensor.len()).collect();
    order.sort_by(|&a, &b| tensor[a].total_cmp(&tensor[b]));
    let mut out = vec![0.0; tensor.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = state.sorted_values[rank];
    }
    Ok(out)
}

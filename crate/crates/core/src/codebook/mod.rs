//! Quantization levels for weights/biases and activations.

mod activation;
mod kmeans;
mod laplacian;
mod modelfree;
mod octave;

pub use activation::{octave_activations, uniform_linear_activations};
pub use kmeans::{kmeans_1d, KMeansResult, DEFAULT_SUBSAMPLE};
pub use laplacian::{laplacian_centers, laplacian_codebook, laplacian_deltas, laplacian_w_max, LaplacianCenters};
pub use modelfree::{modelfree_init, modelfree_requantize, triangle_profile, CenterMode, ModelFreeState, TriangleProfile};
pub use octave::{octave_codebook, OctaveCodebook, OctaveCode};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How a codebook's levels were produced, with the parameters needed to
/// reproduce or interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Scheme {
    Kmeans,
    Laplacian { w_max: f64, scale: f64 },
    ModelFree,
    Octave { n_q: u32, n_o: u32, k_max_exp: i32 },
    UniformLinear { lo: f64, hi: f64 },
    OctaveActivation { n_q: u32, n_o: u32, s_max_exp: i32 },
    Explicit,
}

/// A sorted, strictly increasing list of quantization levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    levels: Vec<f64>,
    #[serde(flatten)]
    scheme: Scheme,
}

impl Codebook {
    pub fn new(levels: Vec<f64>, scheme: Scheme) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Codebook("codebook needs at least one level".into()));
        }
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Codebook("non-finite level".into()));
        }
        if levels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Codebook("levels must be strictly increasing".into()));
        }
        Ok(Codebook { levels, scheme })
    }

    /// Build from arbitrary values: sorted and deduplicated.
    pub fn from_values(values: impl IntoIterator<Item = f64>, scheme: Scheme) -> Result<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        Codebook::new(v, scheme)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn index_of(&self, v: f64) -> Option<usize> {
        self.levels.binary_search_by(|l| l.total_cmp(&v)).ok()
    }

    pub fn contains_one(&self) -> bool {
        self.index_of(1.0).is_some()
    }

    pub fn contains_zero(&self) -> bool {
        self.index_of(0.0).is_some()
    }

    /// Index of the nearest level; an exact midpoint goes to the level with
    /// the larger magnitude. Out-of-range values clamp to the end levels.
    pub fn nearest_index(&self, x: f64) -> usize {
        let l = &self.levels;
        let hi = l.partition_point(|&v| v < x);
        if hi == 0 {
            return 0;
        }
        if hi == l.len() {
            return l.len() - 1;
        }
        let lo = hi - 1;
        let dl = x - l[lo];
        let dh = l[hi] - x;
        // Ties go to the larger magnitude.
        if dl < dh || (dl == dh && l[hi].abs() < l[lo].abs()) {
            lo
        } else {
            hi
        }
    }

    pub fn nearest(&self, x: f64) -> f64 {
        self.levels[self.nearest_index(x)]
    }

    /// Ensure 1.0 is a level, inserting it when absent. Existing levels are
    /// never moved, so any occupancy bookkeeping stays valid.
    pub fn with_one(mut self) -> Self {
        if let Err(pos) = self.levels.binary_search_by(|l| l.total_cmp(&1.0)) {
            self.levels.insert(pos, 1.0);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_and_duplicates() {
        assert!(Codebook::new(vec![1.0, 0.0], Scheme::Explicit).is_err());
        assert!(Codebook::new(vec![0.0, 0.0], Scheme::Explicit).is_err());
        assert!(Codebook::new(vec![], Scheme::Explicit).is_err());
    }

    #[test]
    fn nearest_with_ties_away_from_zero() {
        let cb = Codebook::new(vec![0.0, 0.5, 1.0], Scheme::Explicit).unwrap();
        assert_eq!(cb.nearest(0.75), 1.0);
        assert_eq!(cb.nearest(0.25), 0.5);
        assert_eq!(cb.nearest(-3.0), 0.0);
        assert_eq!(cb.nearest(7.0), 1.0);
        let neg = Codebook::new(vec![-1.0, -0.5, 0.0], Scheme::Explicit).unwrap();
        assert_eq!(neg.nearest(-0.75), -1.0);
    }

    #[test]
    fn with_one_inserts_once() {
        let cb = Codebook::new(vec![0.0, 10.0], Scheme::Explicit).unwrap().with_one();
        assert_eq!(cb.levels(), &[0.0, 1.0, 10.0]);
        let again = cb.clone().with_one();
        assert_eq!(again, cb);
    }

    #[test]
    fn serde_round_trip() {
        let cb = Codebook::new(vec![-0.5, 0.0, 0.125], Scheme::Octave { n_q: 1, n_o: 2, k_max_exp: 0 }).unwrap();
        let s = serde_json::to_string(&cb).unwrap();
        let back: Codebook = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cb);
    }
}

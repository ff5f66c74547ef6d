//! Toy datasets: two moons, Gaussian blobs and IDX image files.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Shape of one example, `[features]` or `[c, h, w]`.
    pub shape: Vec<usize>,
    pub n_classes: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.shape.iter().product()
    }

    /// Shuffle with `seed` and split off the last `val_fraction` as validation.
    pub fn split(mut self, val_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * val_fraction).round() as usize;
        let n_train = self.len() - n_val.min(self.len());
        let mut take = |ids: &[usize]| Dataset {
            shape: self.shape.clone(),
            n_classes: self.n_classes,
            x: ids.iter().map(|&i| std::mem::take(&mut self.x[i])).collect(),
            y: ids.iter().map(|&i| self.y[i]).collect(),
        };
        let train = take(&idx[..n_train]);
        let val = take(&idx[n_train..]);
        (train, val)
    }

    /// Per-feature `(min, max)`.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); self.n_features()];
        for x in &self.x {
            for (p, &v) in r.iter_mut().zip(x) {
                p.0 = p.0.min(v);
                p.1 = p.1.max(v);
            }
        }
        r
    }

    /// Map each feature affinely from `ranges` onto `[lo, hi]`.
    pub fn rescale(&mut self, ranges: &[(f64, f64)], lo: f64, hi: f64) {
        for x in &mut self.x {
            for (v, &(a, b)) in x.iter_mut().zip(ranges) {
                let t = if b > a { (*v - a) / (b - a) } else { 0.5 };
                *v = lo + t * (hi - lo);
            }
        }
    }
}

/// Two interleaved half circles with Gaussian noise.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidParam("two moons needs at least 2 samples".into()));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t = r.gen_range(0.0..std::f64::consts::PI);
        let (a, b) = if c == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        x.push(vec![a + d.sample(&mut r), b + d.sample(&mut r)]);
        y.push(c);
    }
    Ok(Dataset {
        shape: vec![2],
        n_classes: 2,
        x,
        y,
    })
}

/// Isotropic Gaussian clusters with centers drawn uniformly in `[-5, 5]^dims`.
pub fn blobs(n: usize, classes: usize, dims: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dims == 0 || n < classes {
        return Err(Error::InvalidParam("blobs needs >= 2 classes, >= 1 dimension and n >= classes".into()));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| r.gen_range(-5.0..5.0)).collect())
        .collect();
    let d = Normal::new(0.0, spread.max(0.0)).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        x.push(centers[c].iter().map(|&m| m + d.sample(&mut r)).collect());
        y.push(c);
    }
    Ok(Dataset {
        shape: vec![dims],
        n_classes: classes,
        x,
        y,
    })
}

fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(path, "not an IDX file"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(path, format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let nd = bytes[3] as usize;
    let head = 4 + 4 * nd;
    if nd == 0 || bytes.len() < head {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = (0..nd)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != head + n {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: head + n,
            actual: bytes.len(),
        });
    }
    Ok((dims, bytes[head..].to_vec()))
}

/// Unsigned-byte IDX images (`[n, h, w]`) and labels (`[n]`); pixels scaled to `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let (idims, pix) = read_idx(ip)?;
    let (ldims, lab) = read_idx(lp)?;
    if ldims.len() != 1 || idims.len() < 2 || idims[0] != ldims[0] {
        return Err(Error::format(ip, "image and label counts disagree"));
    }
    let n = idims[0];
    let per: usize = idims[1..].iter().product();
    let shape = match idims.len() {
        2 => vec![per],
        3 => vec![1, idims[1], idims[2]],
        _ => vec![idims[1], idims[2], idims[3..].iter().product()],
    };
    let x = (0..n)
        .map(|i| pix[i * per..(i + 1) * per].iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    let y: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let n_classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(Dataset { shape, n_classes, x, y })
}

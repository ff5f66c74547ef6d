//! One-dimensional Lloyd k-means over pooled weights and biases.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Codebook, Scheme};
use crate::{Error, Result};

pub const DEFAULT_SUBSAMPLE: usize = 100_000;
const MAX_ITERS: usize = 100;
const REL_TOL: f64 = 1e-7;
const RESTARTS: usize = 30;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Centers with 1.0 ensured.
    pub codebook: Codebook,
    /// The `k` raw cluster centers, sorted.
    pub centers: Vec<f64>,
    /// Sum of squared distances of the clustered subsample to `centers`.
    pub inertia: f64,
    /// The sorted subsample that was clustered.
    pub sample: Vec<f64>,
}

/// Cluster a seeded subsample of `samples` into `k` centers with k-means++
/// seeding and Lloyd iterations, keeping the best of several restarts.
pub fn kmeans_1d(samples: &[f64], k: usize, subsample: usize, seed: u64) -> Result<KMeansResult> {
    if k < 2 {
        return Err(Error::Codebook(format!("k-means needs k >= 2, got {k}")));
    }
    if samples.is_empty() {
        return Err(Error::Codebook("k-means needs at least one sample".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Codebook("non-finite sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = if samples.len() > subsample.max(1) {
        index::sample(&mut rng, samples.len(), subsample.max(1))
            .into_iter()
            .map(|i| samples[i])
            .collect()
    } else {
        samples.to_vec()
    };
    data.sort_by(f64::total_cmp);
    let mut distinct = data.clone();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::Codebook(format!(
            "k = {k} exceeds the {} distinct sample values",
            distinct.len()
        )));
    }

    let prefix = Prefix::new(&data);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..RESTARTS {
        let init = kmeanspp_init(&data, k, &mut rng);
        let (centers, _) = lloyd(&data, &prefix, init, &distinct);
        let centers = refine(&data, &prefix, &centers);
        let (centers, inertia) = lloyd(&data, &prefix, centers, &distinct);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((centers, inertia));
        }
    }
    let (centers, inertia) = best.expect("at least one restart");
    let codebook = Codebook::from_values(centers.iter().copied(), Scheme::Kmeans)?.with_one();
    Ok(KMeansResult {
        codebook,
        centers,
        inertia,
        sample: data,
    })
}

struct Prefix {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Prefix {
    fn new(data: &[f64]) -> Self {
        let mut sum = Vec::with_capacity(data.len() + 1);
        let mut sq = Vec::with_capacity(data.len() + 1);
        sum.push(0.0);
        sq.push(0.0);
        for &x in data {
            sum.push(sum.last().unwrap() + x);
            sq.push(sq.last().unwrap() + x * x);
        }
        Prefix { sum, sq }
    }
}

fn kmeanspp_init(data: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![data[rng.gen_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            data[rng.gen_range(0..data.len())]
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            data[pick]
        };
        centers.push(next);
        for (d, &x) in d2.iter_mut().zip(data) {
            *d = d.min((x - next).powi(2));
        }
    }
    centers
}

/// Lloyd iterations on sorted data. Assignments are contiguous runs split at
/// center midpoints, so each step is `O(k log n)` with prefix sums.
fn lloyd(data: &[f64], prefix: &Prefix, mut centers: Vec<f64>, distinct: &[f64]) -> (Vec<f64>, f64) {
    centers.sort_by(f64::total_cmp);
    let mut prev = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let bounds = segment_bounds(data, &centers);
        let mut next = Vec::with_capacity(centers.len());
        inertia = 0.0;
        let mut empty = Vec::new();
        for (c, w) in bounds.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if a == b {
                empty.push(c);
                next.push(centers[c]);
                continue;
            }
            let n = (b - a) as f64;
            let s = prefix.sum[b] - prefix.sum[a];
            let mean = s / n;
            inertia += (prefix.sq[b] - prefix.sq[a]) - s * mean;
            next.push(mean);
        }
        // Move empty clusters onto the distinct value farthest from its center.
        for c in empty {
            if let Some(&far) = distinct
                .iter()
                .filter(|v| !next.contains(v))
                .max_by(|a, b| nearest_dist(**a, &next).total_cmp(&nearest_dist(**b, &next)))
            {
                next[c] = far;
            }
        }
        next.sort_by(f64::total_cmp);
        centers = next;
        if (prev - inertia).abs() <= REL_TOL * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        prev = inertia;
    }
    let inertia = exact_inertia(data, &centers).min(inertia.max(0.0));
    (centers, inertia)
}

/// Squared error of `data[a..b]` around its mean.
fn seg_cost(p: &Prefix, a: usize, b: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let s = p.sum[b] - p.sum[a];
    ((p.sq[b] - p.sq[a]) - s * s / (b - a) as f64).max(0.0)
}

/// Single-point moves between neighbouring segments (Hartigan's rule
/// restricted to contiguous clusters) until no move lowers the cost.
fn boundary_moves(prefix: &Prefix, b: &mut [usize]) {
    let k = b.len() - 1;
    let mut improved = true;
    let mut rounds = 0;
    while improved && rounds < MAX_ITERS {
        improved = false;
        rounds += 1;
        for j in 1..k {
            loop {
                let (lo, mid, hi) = (b[j - 1], b[j], b[j + 1]);
                let here = seg_cost(prefix, lo, mid) + seg_cost(prefix, mid, hi);
                let left = (mid > lo + 1).then(|| seg_cost(prefix, lo, mid - 1) + seg_cost(prefix, mid - 1, hi));
                let right = (mid + 1 < hi).then(|| seg_cost(prefix, lo, mid + 1) + seg_cost(prefix, mid + 1, hi));
                let tol = 1e-12 * here.max(f64::MIN_POSITIVE);
                match (left, right) {
                    (Some(l), r) if l < here - tol && r.is_none_or(|r| l <= r) => b[j] -= 1,
                    (_, Some(r)) if r < here - tol => b[j] += 1,
                    _ => break,
                }
                improved = true;
            }
        }
    }
}

/// Best two-way split point of `a..b` and the cost it saves.
fn best_split(prefix: &Prefix, a: usize, b: usize) -> Option<(usize, f64)> {
    let whole = seg_cost(prefix, a, b);
    (a + 1..b)
        .map(|t| (t, whole - seg_cost(prefix, a, t) - seg_cost(prefix, t, b)))
        .max_by(|x, y| x.1.total_cmp(&y.1))
}

fn total_cost(prefix: &Prefix, b: &[usize]) -> f64 {
    b.windows(2).map(|w| seg_cost(prefix, w[0], w[1])).sum()
}

/// Local search on contiguous segments: boundary moves, then repeated
/// merge-the-cheapest-pair / split-the-best-segment steps while they lower
/// the cost. Returns the segment means.
fn refine(data: &[f64], prefix: &Prefix, centers: &[f64]) -> Vec<f64> {
    let mut b = segment_bounds(data, centers);
    if b.windows(2).any(|w| w[1] <= w[0]) {
        return centers.to_vec();
    }
    boundary_moves(prefix, &mut b);
    let mut cost = total_cost(prefix, &b);
    let mut splits: HashMap<(usize, usize), Option<(usize, f64)>> = HashMap::new();
    let mut split_of = |a: usize, z: usize| *splits.entry((a, z)).or_insert_with(|| best_split(prefix, a, z));
    for _ in 0..MAX_ITERS {
        let k = b.len() - 1;
        if k < 3 {
            break;
        }
        let mut best: Option<(Vec<usize>, f64)> = None;
        for j in 1..k {
            let mut trial = b.clone();
            trial.remove(j);
            let split = trial
                .windows(2)
                .filter_map(|w| split_of(w[0], w[1]))
                .max_by(|x, y| x.1.total_cmp(&y.1));
            let Some((t, _)) = split else { continue };
            let pos = trial.partition_point(|&v| v < t);
            trial.insert(pos, t);
            boundary_moves(prefix, &mut trial);
            let c = total_cost(prefix, &trial);
            if best.as_ref().is_none_or(|(_, bc)| c < *bc) {
                best = Some((trial, c));
            }
        }
        match best {
            Some((trial, c)) if c < cost * (1.0 - 1e-12) => {
                b = trial;
                cost = c;
            }
            _ => break,
        }
    }
    b.windows(2)
        .map(|w| (prefix.sum[w[1]] - prefix.sum[w[0]]) / (w[1] - w[0]) as f64)
        .collect()
}

fn segment_bounds(data: &[f64], centers: &[f64]) -> Vec<usize> {
    let mut bounds = Vec::with_capacity(centers.len() + 1);
    bounds.push(0);
    for p in centers.windows(2) {
        let mid = 0.5 * (p[0] + p[1]);
        bounds.push(data.partition_point(|&x| x < mid));
    }
    bounds.push(data.len());
    bounds
}

fn nearest_dist(x: f64, centers: &[f64]) -> f64 {
    centers.iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min)
}

fn exact_inertia(data: &[f64], centers: &[f64]) -> f64 {
    data.iter().map(|&x| nearest_dist(x, centers).powi(2)).sum()
}

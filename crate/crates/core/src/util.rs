//! Small numeric helpers shared across modules.

/// Nearest integer, ties away from zero. Used for every rounding in the crate.
#[inline]
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// `ceil(log2(n))` with `ceil_log2(0) == ceil_log2(1) == 0`.
#[inline]
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Smallest `e` such that `2^e >= v` for positive finite `v`.
pub fn ceil_pow2_exp(v: f64) -> i32 {
    debug_assert!(v > 0.0 && v.is_finite());
    let mut e = v.log2().ceil() as i32;
    while 2f64.powi(e) < v {
        e += 1;
    }
    while 2f64.powi(e - 1) >= v {
        e -= 1;
    }
    e
}

/// Indices of the `k` largest values, highest first; ties keep the lower index.
pub fn top_k<T: PartialOrd + Copy>(values: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k.min(values.len()));
    idx
}

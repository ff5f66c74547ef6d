//! Branch-free, multiply-free leading-zero counts.

/// Population count using only shifts, masks and adds.
#[inline]
fn pop(mut x: u32) -> u32 {
    x = x - ((x >> 1) & 0x5555_5555);
    x = (x & 0x3333_3333) + ((x >> 2) & 0x3333_3333);
    x = (x + (x >> 4)) & 0x0F0F_0F0F;
    x += x >> 8;
    x += x >> 16;
    x & 0x3F
}

/// Number of leading zero bits; `nlz(0) == 32`. Smears the highest set bit
/// rightwards and counts the zeros that remain.
#[inline]
pub fn nlz(mut x: u32) -> u32 {
    x |= x >> 1;
    x |= x >> 2;
    x |= x >> 4;
    x |= x >> 8;
    x |= x >> 16;
    pop(!x)
}

/// 64-bit variant built from two 32-bit counts without branching.
#[inline]
pub fn nlz64(x: u64) -> u32 {
    let hi = nlz((x >> 32) as u32);
    let lo = nlz(x as u32);
    // hi == 32 exactly when the upper word is empty.
    let take_lo = 0u32.wrapping_sub(hi >> 5);
    hi + (lo & take_lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: u32) -> u32 {
        let mut n = 0;
        let mut bit = 1u32 << 31;
        while bit != 0 && x & bit == 0 {
            n += 1;
            bit >>= 1;
        }
        n
    }

    #[test]
    fn edges() {
        assert_eq!(nlz(0), 32);
        assert_eq!(nlz(1), 31);
        assert_eq!(nlz(u32::MAX), 0);
        assert_eq!(nlz64(0), 64);
        assert_eq!(nlz64(1), 63);
        assert_eq!(nlz64(1 << 40), 23);
    }

    #[test]
    fn all_high_half_patterns() {
        for v in 0..=0xFFFFu32 {
            let x = v << 16;
            assert_eq!(nlz(x), naive(x));
            assert_eq!(nlz(v), naive(v));
        }
    }

    #[test]
    fn agrees_with_std() {
        let mut x = 0x9E37_79B9_7F4A_7C15u64;
        for _ in 0..10_000 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            assert_eq!(nlz(x as u32), (x as u32).leading_zeros());
            assert_eq!(nlz64(x >> (x & 63)), (x >> (x & 63)).leading_zeros());
        }
    }
}

mod common;

use common::rng;
use lutnet::codebook::{uniform_linear_activations, Codebook, Scheme};
use lutnet::model::Activation;
use lutnet::tables::{build_activation_table, pack_weight_indices, packed_byte_len, unpack_weight_indices, PackedIndices, ProductLut};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn tanh_table_matches_published_span() {
    let cb = uniform_linear_activations(32, Activation::Tanh).unwrap();
    let t = build_activation_table(Activation::Tanh, &cb, 0.02).unwrap();
    assert_eq!(t.n_x(), 207);
    let (lo, hi) = t.span();
    assert!((lo + 2.06).abs() < 1e-9 && (hi - 2.06).abs() < 1e-9, "span {lo}..{hi}");
}

#[test]
fn relu6_default_table_is_clamp_identity() {
    for n_a in [2, 3, 8, 16, 32, 64, 256] {
        let cb = uniform_linear_activations(n_a, Activation::Relu6).unwrap();
        let dx = cb.level(1) - cb.level(0);
        let t = build_activation_table(Activation::Relu6, &cb, dx).unwrap();
        assert_eq!(t.k_lo, 0);
        assert_eq!(t.entries, (0..n_a as u16).collect::<Vec<_>>());
        for k in -5..(n_a as i64 + 5) {
            assert_eq!(t.lookup(k) as i64, k.clamp(0, n_a as i64 - 1));
        }
    }
}

#[test]
fn packing_round_trips_for_listed_widths() {
    let mut r = rng(3);
    for n_w in [2usize, 3, 4, 16, 241, 256, 512] {
        for len in [0usize, 1, 7, 8, 9, 63, 1000, 4099] {
            let mut idx: Vec<u32> = (0..len).map(|_| r.gen_range(0..n_w as u32)).collect();
            if len >= n_w {
                idx[..n_w].copy_from_slice(&(0..n_w as u32).collect::<Vec<_>>());
            }
            let p = pack_weight_indices(&idx, n_w).unwrap();
            assert_eq!(p.bytes.len(), packed_byte_len(len, p.bits));
            assert_eq!(p.bits, (n_w as f64).log2().ceil() as u32);
            assert_eq!(unpack_weight_indices(&p), idx);
            let back = PackedIndices::from_bytes(p.bits, p.len, p.bytes.clone()).unwrap();
            assert_eq!(back.unpack(), idx);
        }
        assert!(pack_weight_indices(&[n_w as u32], n_w).is_err());
    }
}

#[test]
fn product_entry_hand_example() {
    // 0.75 * 2 = 1.5, and 1.5 / 0.5 * 2^4 = 48.
    let lut = ProductLut::build_full(&[0.75, 1.0], &[0.0, 2.0], 4, 0.5, 31).unwrap();
    assert_eq!(lut.get(0, 1), 48);
    assert_eq!(lut.get(1, 1), 64);
    assert_eq!(lut.get(0, 0), 0);
}

fn levels(v: Vec<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.into_iter().map(|x| (x * 1e6).round() / 1e6).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

proptest! {
    #[test]
    fn lut_entries_within_half_lsb(
        w in proptest::collection::vec(-2.0f64..2.0, 1..20),
        a in proptest::collection::vec(-1.0f64..6.0, 1..20),
        s in 1u32..20,
        dx in 0.005f64..1.0,
    ) {
        let w = levels(w);
        let a = levels(a);
        let lut = ProductLut::build_full(&w, &a, s, dx, 31).unwrap();
        let lsb = dx / (s as f64).exp2();
        for (i, &wi) in w.iter().enumerate() {
            for (j, &aj) in a.iter().enumerate() {
                let err = (lut.get(i, j) as f64 * lsb - wi * aj).abs();
                prop_assert!(err <= 0.5 * lsb * (1.0 + 1e-9), "({i},{j}) err {err} lsb {lsb}");
            }
        }
        // The readout row is present exactly once.
        let readout_rows = lut.total_rows() - lut.rows;
        prop_assert_eq!(readout_rows, usize::from(!w.contains(&1.0)));
    }

    #[test]
    fn activation_tables_are_monotone_with_fixed_ends(
        n_a in 2usize..80,
        dx in 0.005f64..0.5,
        tanh in any::<bool>(),
    ) {
        let act = if tanh { Activation::Tanh } else { Activation::Relu6 };
        let cb = uniform_linear_activations(n_a, act).unwrap();
        let t = build_activation_table(act, &cb, dx).unwrap();
        prop_assert!(t.entries.windows(2).all(|p| p[0] <= p[1]));
        prop_assert_eq!(t.entries[0], 0);
        prop_assert_eq!(*t.entries.last().unwrap() as usize, n_a - 1);
        // Every entry is the nearest level of Γ(kΔx), checked by brute force.
        for (p, &e) in t.entries.iter().enumerate() {
            let y = act.apply((t.k_lo + p as i64) as f64 * dx);
            let d = (cb.level(e as usize) - y).abs();
            prop_assert!(cb.levels().iter().all(|&l| (l - y).abs() >= d - 1e-12));
        }
    }

    #[test]
    fn packing_round_trips(n_w in 1usize..1025, seed in any::<u64>(), len in 0usize..600) {
        let mut r = rng(seed);
        let idx: Vec<u32> = (0..len).map(|_| r.gen_range(0..n_w as u32)).collect();
        let p = pack_weight_indices(&idx, n_w).unwrap();
        prop_assert_eq!(p.unpack(), idx);
    }

    #[test]
    fn octave_activation_codebooks_are_sorted(n_q in 1u32..16, n_o in 1u32..8) {
        let cb = lutnet::codebook::octave_activations(n_q, n_o, Activation::Relu6).unwrap();
        prop_assert_eq!(cb.len() as u32, n_q * n_o + 1);
        prop_assert_eq!(cb.level(0), 0.0);
        let again = Codebook::new(cb.levels().to_vec(), Scheme::Explicit);
        prop_assert!(again.is_ok());
    }
}

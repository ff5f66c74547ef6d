mod common;

use common::{random_convnet, random_mlp, rng};
use lutnet::engine_log::{quantize_log_model, LogConfig};
use lutnet::metrics::{
    log_report, lut_report, network_size_bits, nuc_modelfree, nuc_octave_linear, nuc_octave_octave, nwnc_modelfree,
};
use lutnet::model::Activation;
use lutnet::quantized::{quantize_model, ActMethod, QuantizeConfig, WeightMethod};
use proptest::prelude::*;

/// Bytes after the magic, version, header length and JSON header.
fn section_bytes(file: &[u8]) -> usize {
    let hlen = u64::from_le_bytes(file[8..16].try_into().unwrap()) as usize;
    file.len() - 16 - hlen
}

#[test]
fn lut_report_matches_serialized_sections() {
    let mut r = rng(21);
    let models = [
        random_mlp(&mut r, &[20, 12, 5], Activation::Relu6),
        random_mlp(&mut r, &[7, 9, 9, 3], Activation::Tanh),
        random_convnet(&mut r, 2, 4, 4, Activation::Relu6, 3),
    ];
    for m in &models {
        for w in [
            WeightMethod::Kmeans { n_w: 5 },
            WeightMethod::Octave { n_q: 4, n_o: 5 },
            WeightMethod::Laplacian { n_w: 31 },
        ] {
            for compact in [true, false] {
                let mut cfg = QuantizeConfig::new(w, ActMethod::Linear { n_a: 16 });
                cfg.compact_octave = compact;
                let q = quantize_model(m, &cfg).unwrap();
                let rep = lut_report(&q);
                assert_eq!(section_bytes(&q.to_bytes().unwrap()), rep.serialized_bytes, "{w:?} compact={compact}");
            }
        }
    }
}

#[test]
fn log_report_matches_serialized_sections() {
    let mut r = rng(22);
    let m = random_mlp(&mut r, &[10, 8, 4], Activation::Relu6);
    for (qw, ow, qa, oa) in [(8, 6, 8, 3), (4, 4, 16, 2), (16, 3, 4, 5)] {
        let lq = quantize_log_model(&m, &LogConfig::new(qw, ow, qa, oa)).unwrap();
        let rep = log_report(&lq);
        assert_eq!(section_bytes(&lq.to_bytes().unwrap()), rep.serialized_bytes);
        let tables = (qw.max(qa) + 4 * qa) as usize;
        assert_eq!(rep.network_lut_entries, tables);
        assert_eq!(lq.tables.entries(), tables);
        assert_eq!(rep.nuc, nuc_octave_octave(qw as usize, ow as usize, qa as usize, oa as usize).0);
    }
}

#[test]
fn published_counts() {
    assert_eq!(nuc_modelfree(512, 32), 16384);
    assert_eq!(nwnc_modelfree(&[512; 8], 32), 131072);
    assert_eq!(nuc_octave_linear(16, 15, 64), (1038, 1024));
    assert_eq!(nuc_octave_octave(8, 15, 32, 3).0, 176);
    assert_eq!(nuc_octave_octave(8, 24, 64, 5), (347, 320));
}

proptest! {
    #[test]
    fn counts_grow_with_every_parameter(
        n_w in 1usize..2048, n_a in 1usize..512, layers in 1usize..10,
        n_q in 1usize..64, n_o in 1usize..32,
    ) {
        prop_assert!(nuc_modelfree(n_w + 1, n_a) > nuc_modelfree(n_w, n_a));
        prop_assert!(nuc_modelfree(n_w, n_a + 1) > nuc_modelfree(n_w, n_a));
        prop_assert_eq!(nwnc_modelfree(&vec![n_w; layers], n_a), layers * n_w * n_a);
        let (nuc, lut) = nuc_octave_linear(n_q, n_o, n_a);
        prop_assert_eq!(nuc - lut, n_o - 1);
        prop_assert!(nuc_octave_linear(n_q, n_o + 1, n_a).0 > nuc);
        prop_assert!(nuc_octave_linear(n_q + 1, n_o, n_a).0 > nuc);
        prop_assert!(nuc_octave_linear(n_q, n_o, n_a + 1).0 > nuc);
    }

    #[test]
    fn octave_octave_tables_are_independent_of_octaves(
        qw in 0u32..8, qa in 0u32..8, ow in 1usize..40, oa in 1usize..40,
    ) {
        let (qw, qa) = (1usize << qw, 1usize << qa);
        let (nuc, t) = nuc_octave_octave(qw, ow, qa, oa);
        prop_assert_eq!(t, qw.max(qa) + 4 * qa);
        prop_assert_eq!(nuc_octave_octave(qw, ow + 5, qa, oa).1, t);
        prop_assert_eq!(nuc_octave_octave(qw, ow + 5, qa, oa).0, nuc + 5);
    }

    #[test]
    fn size_is_sum_of_parts(n_net in 1u64..1_000_000, n_w in 2u64..1024, n_a in 2u64..256, n_x in 2u64..4096, s in 1u32..24) {
        let sz = network_size_bits(n_net, n_w, n_a, n_x, s);
        let lg = |v: u64| (v as f64).log2().ceil() as u64;
        prop_assert_eq!(sz.weight_table_bits, n_net * lg(n_w));
        prop_assert_eq!(sz.lut_bits, (s as u64 + lg(n_x)) * n_a * n_w);
        prop_assert_eq!(sz.activation_table_bits, n_x * lg(n_a));
        prop_assert_eq!(sz.total_bits, sz.weight_table_bits + sz.lut_bits + sz.activation_table_bits);
        prop_assert!(network_size_bits(n_net + 1, n_w, n_a, n_x, s).total_bits >= sz.total_bits);
    }
}

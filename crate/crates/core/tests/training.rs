mod common;

use lutnet::codebook::CenterMode;
use lutnet::model::Activation;
use lutnet::quantized::{ActMethod, WeightMethod};
use lutnet::train::{accuracy, train, two_moons, Dataset, QuantSpec, TrainConfig, TrainNet, TrainResult};
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;
const MAX_GAP_POINTS: f64 = 3.0;

fn moons(act: Activation, seed: u64) -> (Dataset, Dataset) {
    let (lo, hi) = act.bounds().unwrap();
    let (mut tr, mut va) = two_moons(1000, 0.15, seed).unwrap().split(0.3, seed);
    let ranges = tr.ranges();
    tr.rescale(&ranges, lo, hi);
    va.rescale(&ranges, lo, hi);
    (tr, va)
}

fn base_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 60,
        float_epochs: 30,
        lr: 0.02,
        seed,
        ..TrainConfig::default()
    }
}

fn spec(weights: WeightMethod, activations: Option<ActMethod>, period: usize) -> QuantSpec {
    QuantSpec {
        weights,
        activations,
        period,
        requantize: true,
        quantize_input: activations.is_some(),
    }
}

fn distinct(r: &TrainResult) -> usize {
    let mut v: Vec<f64> = r.net.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Central differences of the batch loss against the analytic gradient.
#[test]
fn gradients_match_central_differences() {
    for (act, seed) in [(Activation::Tanh, 1u64), (Activation::Relu6, 2), (Activation::Tanh, 3)] {
        let net = TrainNet::mlp(&[3, 7, 5, 4], act, seed).unwrap();
        let mut r = common::rng(seed);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| r.gen_range(-1.5..1.5)).collect()).collect();
        let ys: Vec<usize> = (0..6).map(|_| r.gen_range(0..4)).collect();
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (_, g) = net.loss_and_grad(&xr, &ys, None);
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for which in 0..2 {
                let n = if which == 0 { net.layers[l].w.len() } else { net.layers[l].b.len() };
                for i in 0..n {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    let (p, m) = if which == 0 {
                        (&mut plus.layers[l].w[i], &mut minus.layers[l].w[i])
                    } else {
                        (&mut plus.layers[l].b[i], &mut minus.layers[l].b[i])
                    };
                    *p += h;
                    *m -= h;
                    let fd = (plus.loss(&xr, &ys, None) - minus.loss(&xr, &ys, None)) / (2.0 * h);
                    let an = if which == 0 { g.w[l][i] } else { g.b[l][i] };
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                    assert!(rel <= GRAD_TOL, "{act:?} layer {l} param {which}/{i}: analytic {an} numeric {fd}");
                }
            }
        }
    }
}

#[test]
fn distinct_values_stay_within_budget_after_every_event() {
    let (tr, va) = moons(Activation::Tanh, 4);
    for weights in [
        WeightMethod::Kmeans { n_w: 7 },
        WeightMethod::Laplacian { n_w: 9 },
        WeightMethod::Octave { n_q: 4, n_o: 3 },
    ] {
        let cfg = TrainConfig {
            epochs: 6,
            float_epochs: 3,
            quant: Some(spec(weights, Some(ActMethod::Linear { n_a: 16 }), 7)),
            ..base_config(4)
        };
        let r = train(TrainNet::mlp(&[2, 12, 2], Activation::Tanh, 4).unwrap(), &tr, &va, &cfg).unwrap();
        assert!(r.events.len() > 2);
        for e in &r.events {
            assert!(e.distinct_params <= e.n_w, "{weights:?}: {} > {}", e.distinct_params, e.n_w);
        }
        assert_eq!(r.events.last().unwrap().step, r.steps);
        assert!(distinct(&r) <= r.events[0].n_w);
    }
}

#[test]
fn modelfree_training_preserves_each_layer_multiset() {
    let (tr, va) = moons(Activation::Relu6, 5);
    let cfg = TrainConfig {
        epochs: 4,
        float_epochs: 2,
        quant: Some(spec(WeightMethod::Modelfree { n_w: 9, center: CenterMode::Median }, None, 5)),
        ..base_config(5)
    };
    let r = train(TrainNet::mlp(&[2, 10, 10, 2], Activation::Relu6, 5).unwrap(), &tr, &va, &cfg).unwrap();
    let first = lutnet::train::train(
        TrainNet::mlp(&[2, 10, 10, 2], Activation::Relu6, 5).unwrap(),
        &tr,
        &va,
        &TrainConfig { epochs: 2, quant: None, ..cfg.clone() },
    )
    .unwrap();
    for (a, b) in r.net.layers.iter().zip(&first.net.layers) {
        let sorted = |l: &lutnet::train::TrainLayer| {
            let mut v: Vec<f64> = l.w.iter().chain(&l.b).copied().collect();
            v.sort_by(f64::total_cmp);
            v
        };
        // Same multiset as the one frozen at the first event.
        let init = lutnet::codebook::modelfree_init(&sorted(b), 9, CenterMode::Median).unwrap();
        assert_eq!(sorted(a), init.sorted_values);
    }
    assert!(r.events.iter().all(|e| e.distinct_params <= 9));
}

#[test]
fn same_seed_is_bit_identical() {
    let (tr, va) = moons(Activation::Tanh, 6);
    let cfg = TrainConfig {
        epochs: 4,
        float_epochs: 2,
        quant: Some(spec(WeightMethod::Kmeans { n_w: 5 }, Some(ActMethod::Linear { n_a: 8 }), 3)),
        ..base_config(6)
    };
    let net = TrainNet::mlp(&[2, 8, 2], Activation::Tanh, 6).unwrap();
    let a = train(net.clone(), &tr, &va, &cfg).unwrap();
    let b = train(net.clone(), &tr, &va, &cfg).unwrap();
    let bits = |r: &TrainResult| -> Vec<u64> { r.net.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)).map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.events, b.events);
    assert_eq!(a.epochs, b.epochs);
    let c = train(net, &tr, &va, &TrainConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn ablation_without_requantize_matches_float_run() {
    let (tr, va) = moons(Activation::Tanh, 7);
    let base = TrainConfig { epochs: 5, float_epochs: 2, ..base_config(7) };
    let net = TrainNet::mlp(&[2, 8, 2], Activation::Tanh, 7).unwrap();
    let float_run = train(net.clone(), &tr, &va, &base).unwrap();
    let mut s = spec(WeightMethod::Kmeans { n_w: 3 }, None, 1);
    s.requantize = false;
    let ablated = train(net, &tr, &va, &TrainConfig { quant: Some(s), ..base }).unwrap();
    assert!(ablated.events.is_empty());
    for (a, b) in ablated.net.layers.iter().zip(&float_run.net.layers) {
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
    }
}

#[test]
fn period_one_requantizes_after_every_step() {
    let (tr, va) = moons(Activation::Relu6, 8);
    let cfg = TrainConfig {
        epochs: 3,
        float_epochs: 1,
        quant: Some(spec(WeightMethod::Octave { n_q: 2, n_o: 4 }, Some(ActMethod::Linear { n_a: 8 }), 1)),
        ..base_config(8)
    };
    let r = train(TrainNet::mlp(&[2, 6, 2], Activation::Relu6, 8).unwrap(), &tr, &va, &cfg).unwrap();
    let per_epoch = tr.len().div_ceil(cfg.batch_size);
    assert_eq!(r.events.len(), 1 + 2 * per_epoch);
    let steps: Vec<usize> = r.events.iter().map(|e| e.step).collect();
    assert_eq!(steps, (per_epoch..=3 * per_epoch).collect::<Vec<_>>());
}

#[test]
fn two_moons_octave_linear_close_to_float() {
    for (act, seed) in [(Activation::Tanh, 0u64), (Activation::Relu6, 1)] {
        let (tr, va) = moons(act, seed);
        let net = TrainNet::mlp(&[2, 32, 32, 2], act, seed).unwrap();
        let base = base_config(seed);
        let float_run = train(net.clone(), &tr, &va, &base).unwrap();
        let cfg = TrainConfig {
            quant: Some(spec(WeightMethod::Octave { n_q: 8, n_o: 4 }, Some(ActMethod::Linear { n_a: 16 }), 100)),
            ..base
        };
        let q = train(net, &tr, &va, &cfg).unwrap();
        let f_acc = accuracy(&float_run.net, &va, None);
        let q_acc = q.accuracy(&va);
        let gap = 100.0 * (f_acc - q_acc);
        assert!(gap <= MAX_GAP_POINTS, "{act:?}: float {f_acc} quantized {q_acc}");
        assert!(q.events.iter().all(|e| e.distinct_params <= e.n_w));
        assert_eq!(q.events[0].n_w, 65);
    }
}

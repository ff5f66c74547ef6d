//! Shared generators and independent oracles for the integration suites.
#![allow(dead_code)]

use lutnet::codebook::Codebook;
use lutnet::fold::{apply_norm, fold_into_consumers};
use lutnet::engine_lut::{reference_preactivations, unit_error_bound, LutEngine};
use lutnet::model::{Activation, ConvGeometry, FloatModel, LayerKind, LayerSpec, NormParams, Shape3};
use lutnet::quantized::QuantizedModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f32> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(r) as f32).collect()
}

/// Dense chain `widths[0] -> ... -> widths[last]`, hidden activation `act`,
/// linear output. Weights scaled so pre-activations stay in a useful range.
pub fn random_mlp(r: &mut ChaCha8Rng, widths: &[usize], act: Activation) -> FloatModel {
    let mut layers = Vec::new();
    for (i, p) in widths.windows(2).enumerate() {
        let last = i + 2 == widths.len();
        let sd = 1.5 / (p[0] as f64).sqrt();
        let w = normal_vec(r, p[0] * p[1], sd);
        let b = normal_vec(r, p[1], 0.3);
        layers.push(LayerSpec::dense(p[0], p[1], w, Some(b), if last { Activation::None } else { act }));
    }
    FloatModel::new(vec![widths[0]], layers).unwrap()
}

/// Conv -> conv -> dense classifier on a `[c, h, w]` input.
pub fn random_convnet(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize, act: Activation, classes: usize) -> FloatModel {
    let g1 = ConvGeometry {
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
    };
    let g2 = ConvGeometry {
        kernel_h: 2,
        kernel_w: 2,
        stride: 2,
        padding: 0,
    };
    let c1 = 3;
    let c2 = 4;
    let l0 = LayerSpec::conv2d(c, c1, g1, normal_vec(r, c1 * c * 9, 0.4 / (c as f64).sqrt()), Some(normal_vec(r, c1, 0.2)), act);
    let l1 = LayerSpec::conv2d(c1, c2, g2, normal_vec(r, c2 * c1 * 4, 0.3), Some(normal_vec(r, c2, 0.2)), act);
    let flat = c2 * (h / 2) * (w / 2);
    let l2 = LayerSpec::dense(flat, classes, normal_vec(r, flat * classes, 1.0 / (flat as f64).sqrt()), Some(normal_vec(r, classes, 0.1)), Activation::None);
    FloatModel::new(vec![c, h, w], vec![l0, l1, l2]).unwrap()
}

pub fn random_norm(r: &mut ChaCha8Rng, c: usize) -> NormParams {
    NormParams {
        gamma: (0..c).map(|_| r.gen_range(0.5..1.5)).collect(),
        beta: (0..c).map(|_| r.gen_range(-0.5..0.5)).collect(),
        mean: (0..c).map(|_| r.gen_range(-0.5..0.5)).collect(),
        var: (0..c).map(|_| r.gen_range(0.5..2.0)).collect(),
        epsilon: 1e-3,
    }
}

pub fn uniform_input(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Exact 1-D k-means by dynamic programming over sorted data, `O(n² k)`.
#[allow(clippy::needless_range_loop)]
pub fn kmeans_dp_inertia(data: &[f64], k: usize) -> f64 {
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + x[i];
        s2[i + 1] = s2[i] + x[i] * x[i];
    }
    // cost of x[i..j]
    let cost = |i: usize, j: usize| {
        let m = (j - i) as f64;
        let s = s1[j] - s1[i];
        ((s2[j] - s2[i]) - s * s / m).max(0.0)
    };
    let mut prev: Vec<f64> = (0..=n).map(|j| if j == 0 { 0.0 } else { cost(0, j) }).collect();
    for c in 2..=k {
        let mut cur = vec![f64::INFINITY; n + 1];
        for j in c..=n {
            let mut best = f64::INFINITY;
            for i in (c - 1)..j {
                let v = prev[i] + cost(i, j);
                if v < best {
                    best = v;
                }
            }
            cur[j] = best;
        }
        prev = cur;
    }
    prev[n]
}

/// Nearest level of a monotone activation over an interval of pre-activations.
fn index_range(cb: &Codebook, act: Activation, lo: f64, hi: f64) -> (usize, usize) {
    (cb.nearest_index(act.apply(lo)), cb.nearest_index(act.apply(hi)))
}

pub struct SampleCheck {
    /// Worst `|acc·Δx/2^s − z| / bound` over all units whose inputs agree with the reference.
    pub worst_ratio: f64,
    /// Units checked against the bound.
    pub units: usize,
    pub argmax_agree: bool,
    /// A disagreement is explained when the reference margin is within the
    /// accumulated deviation bound and every hidden-index flip lies within
    /// the deviation of a decision boundary.
    pub explained: bool,
    pub flips_legal: bool,
    pub hidden_flips: usize,
}

/// Compare the LUT path with the real-arithmetic quantized oracle on one input.
pub fn check_sample(qm: &QuantizedModel, engine: &LutEngine, input: &[f64]) -> SampleCheck {
    let trace = engine.forward_trace(&engine.quantize_input(input)).unwrap();
    let mut ref_in = trace[0].input.clone();
    let mut worst: f64 = 0.0;
    let mut units = 0;
    let mut flips_legal = true;
    let mut hidden_flips = 0;
    let mut final_dev = Vec::new();
    let mut final_ref = Vec::new();
    let mut final_lut = Vec::new();
    for (l, layer) in qm.layers.iter().enumerate() {
        let scale = layer.dx / (qm.s as f64).exp2();
        // Exact reference pre-activations on the LUT path's own inputs.
        let z_same = reference_preactivations(qm, l, &trace[l].input);
        let z_ref = reference_preactivations(qm, l, &ref_in);
        let in_levels = qm.codebooks[layer.input_codebook].levels();
        let w = qm.weight_levels(l);
        let mut ref_out = Vec::with_capacity(z_ref.len());
        for u in 0..z_ref.len() {
            let xhat = trace[l].accumulators[u] as f64 * scale;
            let bound = unit_error_bound(qm, l, u);
            let err = (xhat - z_same[u]).abs();
            worst = worst.max(err / bound);
            units += 1;
            let mut prop = 0.0;
            layer.dims.for_each_connection(u, |wi, ii| {
                let d = in_levels[trace[l].input[ii] as usize] - in_levels[ref_in[ii] as usize];
                prop += w[wi].abs() * d.abs();
            });
            let dev = bound * (1.0 + 1e-9) + prop + 1e-12;
            if let Some(o) = layer.output_codebook {
                let cb = &qm.codebooks[o];
                let r = cb.nearest_index(layer.activation.apply(z_ref[u]));
                let got = trace[l].output.as_ref().unwrap()[u] as usize;
                if got != r {
                    hidden_flips += 1;
                    let pad = dev + 0.5 * layer.dx;
                    let (a, b) = index_range(cb, layer.activation, z_ref[u] - pad, z_ref[u] + pad);
                    if got < a || got > b {
                        flips_legal = false;
                    }
                }
                ref_out.push(r as u16);
            } else {
                final_dev.push(dev);
                final_ref.push(z_ref[u]);
                final_lut.push(xhat);
            }
        }
        ref_in = ref_out;
    }
    let am = |v: &[f64]| {
        let mut best = 0;
        for i in 1..v.len() {
            if v[i] > v[best] {
                best = i;
            }
        }
        best
    };
    let r1 = am(&final_ref);
    let l1 = am(&final_lut);
    let agree = r1 == l1;
    let margin_ok = agree || final_ref[r1] - final_ref[l1] <= final_dev[r1] + final_dev[l1];
    SampleCheck {
        worst_ratio: worst,
        units,
        argmax_agree: agree,
        explained: flips_legal && margin_ok,
        flips_legal,
        hidden_flips,
    }
}

/// `max |a - b|` relative to the reference's largest magnitude.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Attach random output norms, some weight norms and, on an unpadded first
/// layer, an input norm.
pub fn with_norms(r: &mut ChaCha8Rng, m: FloatModel, before: bool) -> FloatModel {
    let shape = m.input_shape().to_vec();
    let mut layers = m.into_layers();
    for (i, l) in layers.iter_mut().enumerate() {
        l.norm = Some(random_norm(r, l.out_channels));
        if r.gen_bool(0.5) {
            l.weight_norm = Some((0..l.out_channels).map(|_| r.gen_range(0.5f32..2.0)).collect());
        }
        let unpadded = match l.kind {
            LayerKind::Conv2d(g) => g.padding == 0,
            LayerKind::Dense => true,
        };
        if before && unpadded && i == 0 {
            l.input_norm = Some(random_norm(r, l.in_channels));
        }
    }
    FloatModel::new(shape, layers).unwrap()
}

/// Worst relative error over 1000 inputs of one norm folded into two conv
/// branches and a dense head, against applying the norm explicitly.
pub fn skip_topology_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = Shape3 { c: 3, h: 2, w: 2 };
    let norm = random_norm(&mut r, 3);
    let dense_in = shape.len();
    // A dense consumer sees the flattened block, so it needs a per-feature norm.
    let per_feature = |v: &[f32]| v.iter().flat_map(|&g| [g; 4]).collect();
    let flat_norm = NormParams {
        gamma: per_feature(&norm.gamma),
        beta: per_feature(&norm.beta),
        mean: per_feature(&norm.mean),
        var: per_feature(&norm.var),
        epsilon: norm.epsilon,
    };
    let conv = LayerSpec::conv2d(3, 4, ConvGeometry::pointwise(), normal_vec(&mut r, 12, 0.5), Some(normal_vec(&mut r, 4, 0.1)), Activation::Relu6);
    let g2 = ConvGeometry { kernel_h: 2, kernel_w: 2, stride: 1, padding: 0 };
    let conv2 = LayerSpec::conv2d(3, 2, g2, normal_vec(&mut r, 24, 0.5), None, Activation::Tanh);
    let dense = LayerSpec::dense(dense_in, 5, normal_vec(&mut r, dense_in * 5, 0.3), None, Activation::None);
    let convs = fold_into_consumers(&norm, &[conv.clone(), conv2.clone()]).unwrap();
    let dense_f = fold_into_consumers(&flat_norm, std::slice::from_ref(&dense)).unwrap();
    let one = |l: &LayerSpec| FloatModel::new(vec![3, 2, 2], vec![l.clone()]).unwrap();
    let flat = |l: &LayerSpec| FloatModel::new(vec![dense_in], vec![l.clone()]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = uniform_input(&mut r, dense_in, -3.0, 3.0);
        let y = apply_norm(&norm, shape, &x);
        for (orig, folded) in [(&conv, &convs[0]), (&conv2, &convs[1])] {
            let want = one(orig).forward(&y).unwrap();
            worst = worst.max(rel_err(&one(folded).forward(&x).unwrap(), &want));
        }
        let want = flat(&dense).forward(&y).unwrap();
        worst = worst.max(rel_err(&flat(&dense_f[0]).forward(&x).unwrap(), &want));
    }
    worst
}

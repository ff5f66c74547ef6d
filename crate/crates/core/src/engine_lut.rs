//! Integer-only inference with per-layer product LUTs.
//!
//! Per hidden unit: sum LUT entries addressed by (weight row, input index),
//! add the bias term, shift right by `s` and look up the next activation
//! index. The final layer keeps its full-precision accumulators. The hot
//! loops use only table loads, integer adds, shifts and compares; every
//! multiply-derived quantity (row offsets, shifts, signs) is resolved when
//! the engine is built.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::OctaveCodebook;
use crate::model::{LayerKind, Shape3};
use crate::quantized::{QuantLayer, QuantizedModel};
use crate::tables::{octave_shift, LutLayout};
use crate::util::top_k;
use crate::{Error, Result};

/// One inference result, shared by all engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    /// Raw integer accumulators of the final layer (empty for the float engine).
    pub accumulators: Vec<i64>,
    /// Final-layer outputs in real units.
    pub logits: Vec<f64>,
    /// Indices of the largest outputs, highest first; ties keep the lower index.
    pub topk: Vec<usize>,
}

impl Inference {
    pub fn from_logits(accumulators: Vec<i64>, logits: Vec<f64>, k: usize) -> Self {
        let topk = if accumulators.is_empty() {
            top_k(&logits, k)
        } else {
            top_k(&accumulators, k)
        };
        Inference {
            accumulators,
            logits,
            topk,
        }
    }

    pub fn argmax(&self) -> Option<usize> {
        self.topk.first().copied()
    }
}

#[derive(Debug, Clone, Copy)]
struct OctTerm {
    row_off: u32,
    shift: u32,
    neg: bool,
    zero: bool,
}

#[derive(Debug, Clone)]
enum Terms {
    /// Row offset (`row · N_a`) per weight.
    Full(Vec<u32>),
    Octave(Vec<OctTerm>),
}

#[derive(Debug, Clone)]
struct LayerPlan {
    terms: Terms,
    /// For conv layers: CSR list of `(weight index, input index)` per output unit.
    conn_start: Vec<u32>,
    conns: Vec<(u32, u32)>,
    dense_in: usize,
    /// Bias term per output unit, with the rounding offset for hidden layers.
    bias: Vec<i64>,
    offset: i64,
    is_final: bool,
}

/// Per-layer intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input: Vec<u16>,
    /// Accumulators including the bias term, excluding any rounding offset.
    pub accumulators: Vec<i64>,
    /// Next-layer activation indices (`None` for the final layer).
    pub output: Option<Vec<u16>>,
}

#[derive(Debug, Clone)]
pub struct LutEngine {
    model: QuantizedModel,
    plans: Vec<LayerPlan>,
}

fn plan_layer(qm: &QuantizedModel, l: usize) -> Result<LayerPlan> {
    let layer: &QuantLayer = &qm.layers[l];
    let cols = layer.lut.cols as u32;
    let terms = match layer.lut.layout {
        LutLayout::Full => Terms::Full((0..layer.n_weights).map(|i| layer.weight_index(i) as u32 * cols).collect()),
        LutLayout::Octave { n_q, n_o, k_max_exp } => {
            let oc = OctaveCodebook::with_exponent(n_q, n_o, k_max_exp)?;
            if oc.codebook() != qm.weight_codebook(l) {
                return Err(Error::Engine(format!("layer {l}: octave LUT does not match its weight codebook")));
            }
            Terms::Octave(
                (0..layer.n_weights)
                    .map(|i| match oc.code(layer.weight_index(i)) {
                        None => OctTerm {
                            row_off: 0,
                            shift: 0,
                            neg: false,
                            zero: true,
                        },
                        Some(c) => OctTerm {
                            row_off: (c.n - 1) * cols,
                            shift: c.k,
                            neg: c.neg,
                            zero: false,
                        },
                    })
                    .collect(),
            )
        }
    };
    let dims = layer.dims;
    let (mut conn_start, mut conns) = (Vec::new(), Vec::new());
    if let LayerKind::Conv2d(_) = dims.kind {
        conn_start.push(0);
        for u in 0..dims.n_out() {
            dims.for_each_connection(u, |w, i| conns.push((w as u32, i as u32)));
            conn_start.push(conns.len() as u32);
        }
    }
    let offset = if layer.is_final() { 0 } else { qm.rounding.offset(qm.s) };
    let bias = (0..dims.n_out())
        .map(|u| layer.bias_terms[dims.channel_of_output(u)] + offset)
        .collect();
    Ok(LayerPlan {
        terms,
        conn_start,
        conns,
        dense_in: dims.n_in(),
        bias,
        offset,
        is_final: layer.is_final(),
    })
}

impl LutEngine {
    pub fn new(model: QuantizedModel) -> Result<Self> {
        let plans = (0..model.layers.len())
            .map(|l| plan_layer(&model, l))
            .collect::<Result<_>>()?;
        Ok(LutEngine { model, plans })
    }

    pub fn model(&self) -> &QuantizedModel {
        &self.model
    }

    pub fn input_len(&self) -> usize {
        self.model.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.model.output_len()
    }

    /// Nearest input-codebook index per input value.
    pub fn quantize_input(&self, input: &[f64]) -> Vec<u16> {
        let cb = self.model.input_codebook();
        input.iter().map(|&x| cb.nearest_index(x) as u16).collect()
    }

    fn accumulate(&self, l: usize, input: &[u16]) -> Vec<i64> {
        let plan = &self.plans[l];
        let lut = &self.model.layers[l].lut.entries;
        let mut acc = plan.bias.clone();
        match (&plan.terms, plan.conns.is_empty() && plan.conn_start.is_empty()) {
            (Terms::Full(rows), true) => {
                let n_in = plan.dense_in;
                for (u, a) in acc.iter_mut().enumerate() {
                    let r = &rows[u * n_in..(u + 1) * n_in];
                    for (ro, &x) in r.iter().zip(input) {
                        *a += lut[*ro as usize + x as usize] as i64;
                    }
                }
            }
            (Terms::Octave(terms), true) => {
                let n_in = plan.dense_in;
                for (u, a) in acc.iter_mut().enumerate() {
                    let t = &terms[u * n_in..(u + 1) * n_in];
                    for (t, &x) in t.iter().zip(input) {
                        *a += oct_term(lut, t, x);
                    }
                }
            }
            (Terms::Full(rows), false) => {
                for (a, c) in acc.iter_mut().zip(plan.conn_start.windows(2)) {
                    for &(w, i) in &plan.conns[c[0] as usize..c[1] as usize] {
                        *a += lut[rows[w as usize] as usize + input[i as usize] as usize] as i64;
                    }
                }
            }
            (Terms::Octave(terms), false) => {
                for (a, c) in acc.iter_mut().zip(plan.conn_start.windows(2)) {
                    for &(w, i) in &plan.conns[c[0] as usize..c[1] as usize] {
                        *a += oct_term(lut, &terms[w as usize], input[i as usize]);
                    }
                }
            }
        }
        acc
    }

    fn activate(&self, l: usize, acc: &[i64]) -> Vec<u16> {
        let table = self.model.layers[l].act_table.as_ref().expect("hidden layer has an activation table");
        let s = self.model.s;
        acc.iter().map(|&a| table.lookup(a >> s)).collect()
    }

    /// Final-layer accumulators for quantized input indices.
    pub fn forward_indices(&self, input: &[u16]) -> Result<Vec<i64>> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        for l in 0..self.plans.len() {
            let acc = self.accumulate(l, &x);
            if self.plans[l].is_final {
                return Ok(acc);
            }
            x = self.activate(l, &acc);
        }
        Ok(x.into_iter().map(i64::from).collect())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<i64>> {
        self.check_input(input.len())?;
        self.forward_indices(&self.quantize_input(input))
    }

    pub fn infer(&self, input: &[f64], k: usize) -> Result<Inference> {
        let acc = self.forward(input)?;
        Ok(Inference::from_logits(acc.clone(), self.logits(&acc), k))
    }

    /// Final accumulators in real units (`acc · Δx / 2^s`).
    pub fn logits(&self, acc: &[i64]) -> Vec<f64> {
        let dx = self.model.layers.last().map_or(1.0, |l| l.dx);
        let scale = dx / (self.model.s as f64).exp2();
        acc.iter().map(|&a| a as f64 * scale).collect()
    }

    pub fn forward_trace(&self, input: &[u16]) -> Result<Vec<LayerTrace>> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        let mut out = Vec::with_capacity(self.plans.len());
        for l in 0..self.plans.len() {
            let acc = self.accumulate(l, &x);
            let next = (!self.plans[l].is_final).then(|| self.activate(l, &acc));
            let off = self.plans[l].offset;
            out.push(LayerTrace {
                input: std::mem::take(&mut x),
                accumulators: acc.iter().map(|a| a - off).collect(),
                output: next.clone(),
            });
            if let Some(n) = next {
                x = n;
            }
        }
        Ok(out)
    }

    /// Run a batch of flattened inputs, optionally on a dedicated thread pool.
    pub fn infer_batch(&self, inputs: &[Vec<f64>], k: usize, threads: Option<usize>) -> Result<Vec<Inference>> {
        run_batch(inputs, threads, |x| self.infer(x, k))
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.input_len() {
            return Err(Error::Shape {
                layer: 0,
                msg: format!("input has {n} values, model expects {}", self.input_len()),
            });
        }
        Ok(())
    }
}

#[inline]
fn oct_term(lut: &[i32], t: &OctTerm, x: u16) -> i64 {
    if t.zero {
        return 0;
    }
    let v = octave_shift(lut[t.row_off as usize + x as usize], t.shift);
    if t.neg {
        -v
    } else {
        v
    }
}

/// Map `f` over inputs in parallel; results keep input order.
pub fn run_batch<T: Send>(
    inputs: &[Vec<f64>],
    threads: Option<usize>,
    f: impl Fn(&[f64]) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let go = || inputs.par_iter().map(|x| f(x)).collect::<Result<Vec<T>>>();
    match threads {
        Some(0) | None => go(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Engine(e.to_string()))?
            .install(go),
    }
}

/// Pre-activations of layer `l` in real arithmetic from quantized levels.
pub fn reference_preactivations(qm: &QuantizedModel, l: usize, input: &[u16]) -> Vec<f64> {
    let layer = &qm.layers[l];
    let acts = qm.codebooks[layer.input_codebook].levels();
    let x: Vec<f64> = input.iter().map(|&i| acts[i as usize]).collect();
    let w = qm.weight_levels(l);
    let b = qm.bias_levels(l);
    crate::model::linear_forward(&layer.dims, &w, Some(&b), &x)
}

/// Quantized network simulated in real arithmetic: quantized weights and
/// activations, exact activation function, then nearest level.
pub fn forward_reference_quantized(qm: &QuantizedModel, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != qm.input_len() {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("input has {} values, model expects {}", input.len(), qm.input_len()),
        });
    }
    let cb = qm.input_codebook();
    let mut x: Vec<u16> = input.iter().map(|&v| cb.nearest_index(v) as u16).collect();
    for (l, layer) in qm.layers.iter().enumerate() {
        let z = reference_preactivations(qm, l, &x);
        match layer.output_codebook {
            None => return Ok(z),
            Some(o) => {
                let ocb = &qm.codebooks[o];
                x = z.iter().map(|&v| ocb.nearest_index(layer.activation.apply(v)) as u16).collect();
            }
        }
    }
    let cb = qm.input_codebook();
    Ok(x.iter().map(|&i| cb.level(i as usize)).collect())
}

/// Real-valued bound on `|acc·Δx/2^s − z|` for output unit `u` of layer `l`:
/// half an LSB per LUT term and for the bias. Compact octave terms add the
/// rounding of their shift.
pub fn unit_error_bound(qm: &QuantizedModel, l: usize, u: usize) -> f64 {
    let layer = &qm.layers[l];
    let lsb = layer.dx / (qm.s as f64).exp2();
    let mut half_lsbs = 1.0;
    match layer.lut.layout {
        LutLayout::Full => layer.dims.for_each_connection(u, |_, _| half_lsbs += 1.0),
        LutLayout::Octave { n_q, n_o, k_max_exp } => {
            let oc = OctaveCodebook::with_exponent(n_q, n_o, k_max_exp).expect("validated at load");
            layer.dims.for_each_connection(u, |w, _| {
                if let Some(c) = oc.code(layer.weight_index(w)) {
                    half_lsbs += if c.k == 0 { 1.0 } else { 1.0 + (-(c.k as f64)).exp2() };
                }
            });
        }
    }
    half_lsbs * 0.5 * lsb
}

/// Input shape helper for callers feeding image-like tensors.
pub fn input_shape3(qm: &QuantizedModel) -> Option<Shape3> {
    Shape3::from_dims(&qm.input_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{uniform_linear_activations, Codebook, Scheme};
    use crate::model::{Activation, FloatModel, LayerSpec};
    use crate::quantized::{quantize_model, ActMethod, QuantizeConfig, ShiftRounding, WeightAssignment, WeightMethod};

    fn identity_unit(n_a: usize) -> QuantizedModel {
        let l0 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::Relu6);
        let l1 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::None);
        let m = FloatModel::new(vec![1], vec![l0, l1]).unwrap();
        let cb = Codebook::new(vec![0.0, 1.0], Scheme::Explicit).unwrap();
        let asg = vec![
            WeightAssignment {
                codebook: cb.clone(),
                occupied: cb.clone(),
                values: vec![1.0],
            },
            WeightAssignment {
                occupied: cb.clone(),
                codebook: cb,
                values: vec![1.0],
            },
        ];
        let cfg = QuantizeConfig::new(WeightMethod::Kmeans { n_w: 2 }, ActMethod::Linear { n_a });
        QuantizedModel::build(&m, &asg, &cfg).unwrap()
    }

    #[test]
    fn identity_round_trips_every_level() {
        let q = identity_unit(8);
        let e = LutEngine::new(q).unwrap();
        let cb = uniform_linear_activations(8, Activation::Relu6).unwrap();
        for j in 0..8u16 {
            let tr = e.forward_trace(&[j]).unwrap();
            assert_eq!(tr[0].output.as_ref().unwrap(), &vec![j]);
            let want = (65536.0 / (6.0 / 7.0) * cb.level(j as usize)).round() as i64;
            assert_eq!(tr[0].accumulators[0], want);
        }
    }

    #[test]
    fn floor_rounding_also_exact_for_identity() {
        let mut q = identity_unit(8);
        q.rounding = ShiftRounding::Floor;
        let e = LutEngine::new(q).unwrap();
        for j in 0..8u16 {
            assert_eq!(e.forward_trace(&[j]).unwrap()[0].output.as_ref().unwrap()[0], j);
        }
    }

    #[test]
    fn quantize_input_examples() {
        let l0 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::Relu6);
        let l1 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::None);
        let m = FloatModel::new(vec![1], vec![l0, l1]).unwrap();
        let cfg = QuantizeConfig::new(WeightMethod::Kmeans { n_w: 2 }, ActMethod::Linear { n_a: 2 });
        let q = quantize_model(&m, &cfg).unwrap();
        let e = LutEngine::new(q).unwrap();
        assert_eq!(e.quantize_input(&[2.9, 3.0, 6.0, 9.0, -1.0]), vec![0, 1, 1, 1, 0]);
    }

    #[test]
    fn zero_weights_give_bias_only() {
        let l0 = LayerSpec::dense(3, 2, vec![0.0; 6], None, Activation::Tanh);
        let l1 = LayerSpec::dense(2, 1, vec![0.0, 0.0], Some(vec![0.5]), Activation::None);
        let m = FloatModel::new(vec![3], vec![l0, l1]).unwrap();
        let cfg = QuantizeConfig::new(WeightMethod::Kmeans { n_w: 3 }, ActMethod::Linear { n_a: 9 });
        let q = quantize_model(&m, &cfg).unwrap();
        let e = LutEngine::new(q.clone()).unwrap();
        let tr = e.forward_trace(&e.quantize_input(&[0.3, -0.2, 0.9])).unwrap();
        let zero_level = q.codebooks[q.layers[0].output_codebook.unwrap()].nearest_index(0.0) as u16;
        assert_eq!(tr[0].output.as_ref().unwrap(), &vec![zero_level; 2]);
        assert_eq!(tr[1].accumulators, vec![1 << 15]);
    }

    #[test]
    fn threads_do_not_change_results() {
        let l0 = LayerSpec::dense(4, 3, (0..12).map(|i| (i as f32).sin()).collect(), Some(vec![0.1; 3]), Activation::Relu6);
        let l1 = LayerSpec::dense(3, 2, (0..6).map(|i| (i as f32).cos()).collect(), None, Activation::None);
        let m = FloatModel::new(vec![4], vec![l0, l1]).unwrap();
        let cfg = QuantizeConfig::new(WeightMethod::Kmeans { n_w: 5 }, ActMethod::Linear { n_a: 16 });
        let e = LutEngine::new(quantize_model(&m, &cfg).unwrap()).unwrap();
        let inputs: Vec<Vec<f64>> = (0..50).map(|k| (0..4).map(|i| ((k * 4 + i) as f64 * 0.37).sin() * 3.0 + 3.0).collect()).collect();
        let a = e.infer_batch(&inputs, 2, Some(1)).unwrap();
        let b = e.infer_batch(&inputs, 2, Some(4)).unwrap();
        assert_eq!(a, b);
    }
}

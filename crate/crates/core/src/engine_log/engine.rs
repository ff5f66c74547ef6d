//! Log-domain inference. Per term: XOR of signs, a shift-and-add of the
//! indices, one `T_q` read and a shift; per unit: one leading-zero count and
//! one `T_q⁻¹` read.

use serde::{Deserialize, Serialize};

use super::{log_multiply, LogQuantModel, LogValue};
use crate::engine_lut::{run_batch, Inference};
use crate::model::linear_forward;
use crate::{Error, Result};

/// Order in which a unit's terms are summed. Integer addition makes the
/// result order-independent; the order only changes the partial-sum range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamOrder {
    #[default]
    Stored,
    /// Smallest weight magnitude first.
    AscendingMagnitude,
}

#[derive(Debug, Clone, Copy)]
struct Term {
    input: u32,
    /// Weight index already scaled to product resolution.
    w: i32,
    neg: bool,
}

#[derive(Debug, Clone)]
struct LayerPlan {
    start: Vec<u32>,
    terms: Vec<Term>,
    bias: Vec<i64>,
    is_final: bool,
}

/// Per-layer values of one log-domain pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTrace {
    pub input: Vec<LogValue>,
    pub accumulators: Vec<i64>,
    pub output: Option<Vec<LogValue>>,
    /// Bits needed by the largest partial sum in this layer.
    pub peak_bits: u32,
}

#[derive(Debug, Clone)]
pub struct LogEngine {
    model: LogQuantModel,
    plans: Vec<LayerPlan>,
    act_shift: u32,
    /// Index of the activation's upper bound on the activation grid.
    cap: i32,
}

fn plan_layer(m: &LogQuantModel, l: usize, order: StreamOrder) -> LayerPlan {
    let layer = &m.layers[l];
    let t = &m.tables;
    let k = layer.kernel_len();
    let mut dense = vec![None; layer.dims.n_weights()];
    for (c, s) in layer.streams.iter().enumerate() {
        for &(p, v) in s {
            dense[c * k + p as usize] = Some(v);
        }
    }
    let mut start = Vec::with_capacity(layer.dims.n_out() + 1);
    let mut terms = Vec::new();
    start.push(0);
    for u in 0..layer.dims.n_out() {
        let first = terms.len();
        layer.dims.for_each_connection(u, |wi, ii| {
            if let Some(v) = dense[wi] {
                terms.push(Term {
                    input: ii as u32,
                    w: t.weight_to_product(v.index),
                    neg: v.sign < 0,
                });
            }
        });
        if order == StreamOrder::AscendingMagnitude {
            terms[first..].sort_by_key(|t| t.w);
        }
        start.push(terms.len() as u32);
    }
    let bias = (0..layer.dims.n_out())
        .map(|u| {
            let b = layer.bias[layer.dims.channel_of_output(u)];
            t.log_to_linear(log_multiply(b, LogValue { sign: 1, index: 0 }, t))
        })
        .collect();
    LayerPlan {
        start,
        terms,
        bias,
        is_final: layer.is_final,
    }
}

fn bits(x: i64) -> u32 {
    64 - x.unsigned_abs().leading_zeros()
}

impl LogEngine {
    pub fn new(model: LogQuantModel) -> Result<Self> {
        Self::with_order(model, StreamOrder::Stored)
    }

    pub fn with_order(model: LogQuantModel, order: StreamOrder) -> Result<Self> {
        let plans = (0..model.layers.len()).map(|l| plan_layer(&model, l, order)).collect();
        let (_, hi) = model
            .input_activation
            .bounds()
            .ok_or_else(|| Error::Engine("input activation must be bounded".into()))?;
        let cap = model.act_grid.encode(hi).index;
        let act_shift = (model.tables.n_qp / model.tables.n_qa).trailing_zeros();
        Ok(LogEngine {
            model,
            plans,
            act_shift,
            cap,
        })
    }

    pub fn model(&self) -> &LogQuantModel {
        &self.model
    }

    pub fn input_len(&self) -> usize {
        self.model.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.model.output_len()
    }

    /// Apply the input activation and encode on the activation grid.
    pub fn quantize_input(&self, input: &[f64]) -> Vec<LogValue> {
        let act = self.model.input_activation;
        input.iter().map(|&x| self.model.act_grid.encode(act.apply(x))).collect()
    }

    fn accumulate<const TRACK: bool>(&self, l: usize, input: &[LogValue]) -> (Vec<i64>, u32) {
        let plan = &self.plans[l];
        let t = &self.model.tables;
        let mut acc = plan.bias.clone();
        let mut peak = 0u32;
        for (u, a) in acc.iter_mut().enumerate() {
            let (s, e) = (plan.start[u] as usize, plan.start[u + 1] as usize);
            for term in &plan.terms[s..e] {
                let x = input[term.input as usize];
                if x.sign == 0 {
                    continue;
                }
                let mag = t.magnitude(term.w + (x.index << self.act_shift));
                let m = -(((x.sign < 0) ^ term.neg) as i64);
                *a += (mag ^ m) - m;
                if TRACK {
                    peak = peak.max(bits(*a));
                }
            }
            if TRACK {
                peak = peak.max(bits(*a));
            }
        }
        (acc, peak)
    }

    fn activate(&self, acc: &[i64]) -> Vec<LogValue> {
        let t = &self.model.tables;
        let g = &self.model.act_grid;
        acc.iter()
            .map(|&a| {
                let d = t.linear_to_log(a);
                if d.sign <= 0 {
                    return LogValue::ZERO;
                }
                g.clamp(LogValue {
                    sign: 1,
                    index: d.index.min(self.cap),
                })
            })
            .collect()
    }

    /// Final-layer fixed-point accumulators for encoded inputs.
    pub fn forward_values(&self, input: &[LogValue]) -> Result<Vec<i64>> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        for l in 0..self.plans.len() {
            let (acc, _) = self.accumulate::<false>(l, &x);
            if self.plans[l].is_final {
                return Ok(acc);
            }
            x = self.activate(&acc);
        }
        Ok(x.iter().map(|v| self.model.tables.log_to_linear(*v)).collect())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<i64>> {
        self.check_input(input.len())?;
        self.forward_values(&self.quantize_input(input))
    }

    pub fn logits(&self, acc: &[i64]) -> Vec<f64> {
        acc.iter().map(|&a| self.model.tables.to_real(a)).collect()
    }

    pub fn infer(&self, input: &[f64], k: usize) -> Result<Inference> {
        let acc = self.forward(input)?;
        Ok(Inference::from_logits(acc.clone(), self.logits(&acc), k))
    }

    pub fn infer_batch(&self, inputs: &[Vec<f64>], k: usize, threads: Option<usize>) -> Result<Vec<Inference>> {
        run_batch(inputs, threads, |x| self.infer(x, k))
    }

    pub fn forward_trace(&self, input: &[LogValue]) -> Result<Vec<LogTrace>> {
        self.check_input(input.len())?;
        let mut x = input.to_vec();
        let mut out = Vec::with_capacity(self.plans.len());
        for l in 0..self.plans.len() {
            let (acc, peak_bits) = self.accumulate::<true>(l, &x);
            let next = (!self.plans[l].is_final).then(|| self.activate(&acc));
            out.push(LogTrace {
                input: std::mem::take(&mut x),
                accumulators: acc,
                output: next.clone(),
                peak_bits,
            });
            if let Some(n) = next {
                x = n;
            }
        }
        Ok(out)
    }

    /// Largest partial-sum width over a whole pass.
    pub fn peak_accumulator_bits(&self, input: &[f64]) -> Result<u32> {
        let tr = self.forward_trace(&self.quantize_input(input))?;
        Ok(tr.iter().map(|t| t.peak_bits).max().unwrap_or(0))
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

/// Real-arithmetic oracle: exact sums of grid values, hidden outputs
/// re-encoded on the activation grid. Returns final-layer outputs.
pub fn forward_reference_log(m: &LogQuantModel, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != m.input_len() {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("input has {} values, model expects {}", input.len(), m.input_len()),
        });
    }
    let n_qa = m.config.n_qa;
    let mut x: Vec<f64> = input
        .iter()
        .map(|&v| m.act_grid.encode(m.input_activation.apply(v)).value(n_qa))
        .collect();
    for (l, layer) in m.layers.iter().enumerate() {
        let z = linear_forward(&layer.dims, &m.weight_values(l), Some(&m.bias_values(l)), &x);
        if layer.is_final {
            return Ok(z);
        }
        x = z
            .iter()
            .map(|&v| m.act_grid.encode(layer.activation.apply(v)).value(n_qa))
            .collect();
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine_log::{quantize_log_model, LogConfig};
    use crate::model::{Activation, FloatModel, LayerSpec};

    fn single(w0: f32, w: f32, b: Option<f32>) -> LogQuantModel {
        let l0 = LayerSpec::dense(1, 1, vec![w0], None, Activation::Relu6);
        let l1 = LayerSpec::dense(1, 1, vec![w], b.map(|b| vec![b]), Activation::None);
        let f = FloatModel::new(vec![1], vec![l0, l1]).unwrap();
        quantize_log_model(&f, &LogConfig::new(8, 4, 8, 3)).unwrap()
    }

    #[test]
    fn unit_weight_passes_grid_level() {
        // K_max = 2 puts 1.0 on the weight grid.
        let m = single(1.0, 1.5, None);
        let e = LogEngine::new(m.clone()).unwrap();
        let cap = m.act_grid.encode(6.0);
        for lv in m.act_grid.levels() {
            let tr = e.forward_trace(&[lv]).unwrap();
            let want = if lv.index > cap.index { cap } else { lv };
            assert_eq!(tr[0].output.as_ref().unwrap()[0], want);
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let m = single(1.0, 0.0, Some(0.5));
        let e = LogEngine::new(m.clone()).unwrap();
        assert_eq!(m.layers[1].n_stream, 0);
        let acc = e.forward(&[3.0]).unwrap();
        assert!((e.logits(&acc)[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn negative_accumulator_clamps_to_zero() {
        let l0 = LayerSpec::dense(1, 1, vec![-1.0], None, Activation::Relu6);
        let l1 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::None);
        let f = FloatModel::new(vec![1], vec![l0, l1]).unwrap();
        let m = quantize_log_model(&f, &LogConfig::new(8, 4, 8, 3)).unwrap();
        let e = LogEngine::new(m).unwrap();
        assert_eq!(e.forward(&[2.0]).unwrap(), vec![0]);
    }

    #[test]
    fn order_does_not_change_sums() {
        let l0 = LayerSpec::dense(4, 2, vec![0.1, -2.0, 0.7, 1.3, -0.4, 0.05, 0.9, -1.1], Some(vec![0.2, -0.3]), Activation::Relu6);
        let l1 = LayerSpec::dense(2, 2, vec![1.0, -0.5, 0.25, 0.8], None, Activation::None);
        let f = FloatModel::new(vec![4], vec![l0, l1]).unwrap();
        let m = quantize_log_model(&f, &LogConfig::new(8, 6, 16, 4)).unwrap();
        let a = LogEngine::new(m.clone()).unwrap();
        let b = LogEngine::with_order(m, StreamOrder::AscendingMagnitude).unwrap();
        let x = [0.5, 2.0, 5.0, 1.25];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert!(a.peak_accumulator_bits(&x).unwrap() > 0);
    }
}

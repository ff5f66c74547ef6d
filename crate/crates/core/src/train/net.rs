//! Trainable chain of dense/conv layers with manual backprop and a softmax
//! cross-entropy head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codebook::Codebook;
use crate::model::{Activation, FloatModel, LayerDims, LayerSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLayer {
    pub spec: LayerSpec,
    pub dims: LayerDims,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainNet {
    pub input_shape: Vec<usize>,
    pub layers: Vec<TrainLayer>,
}

/// Gradients laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Activation quantization used in the forward pass: every hidden output
/// snaps to its codebook's nearest level; gradients pass straight through.
#[derive(Debug, Clone, Default)]
pub struct ForwardQuant {
    pub input: Option<Codebook>,
    /// One codebook per hidden layer.
    pub hidden: Vec<Codebook>,
}

/// Forward value and backward multiplier of an STE activation.
pub fn ste_activation(x: f64, act: Activation, cb: &Codebook) -> (f64, f64) {
    (cb.nearest(act.apply(x)), act.derivative(x))
}

struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl TrainNet {
    /// From a folded float model; every layer gets a (possibly zero) bias.
    pub fn from_model(model: &FloatModel) -> Result<Self> {
        if model.has_norms() {
            return Err(Error::InvalidParam("fold normalization before training".into()));
        }
        let layers = model
            .layers()
            .iter()
            .zip(model.dims())
            .map(|(l, d)| TrainLayer {
                spec: LayerSpec {
                    weights: Vec::new(),
                    bias: None,
                    ..l.clone()
                },
                dims: *d,
                w: l.weights.iter().map(|&v| v as f64).collect(),
                b: match &l.bias {
                    Some(b) => b.iter().map(|&v| v as f64).collect(),
                    None => vec![0.0; l.out_channels],
                },
            })
            .collect();
        Ok(TrainNet {
            input_shape: model.input_shape().to_vec(),
            layers,
        })
    }

    /// Dense chain with `N(0, 2/fan_in)` weights and zero biases.
    pub fn mlp(widths: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidParam("an MLP needs at least input and output widths".into()));
        }
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, p)| {
                let act = if i + 2 == widths.len() { Activation::None } else { hidden };
                let d = Normal::new(0.0, (2.0 / p[0] as f64).sqrt()).unwrap();
                let w: Vec<f32> = (0..p[0] * p[1]).map(|_| d.sample(&mut r) as f32).collect();
                LayerSpec::dense(p[0], p[1], w, Some(vec![0.0; p[1]]), act)
            })
            .collect();
        Self::from_model(&FloatModel::new(vec![widths[0]], layers)?)
    }

    /// Round parameters to f32 and rebuild a float model.
    pub fn to_model(&self) -> Result<FloatModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerSpec {
                weights: l.w.iter().map(|&v| v as f32).collect(),
                bias: Some(l.b.iter().map(|&v| v as f32).collect()),
                ..l.spec.clone()
            })
            .collect();
        FloatModel::new(self.input_shape.clone(), layers)
    }

    /// Store parameters at f32 precision so the trained net and its
    /// exported model agree exactly.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.dims.n_out())
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    fn forward_cache(&self, x: &[f64], q: Option<&ForwardQuant>) -> Cache {
        let mut h: Vec<f64> = match q.and_then(|q| q.input.as_ref()) {
            Some(cb) => x.iter().map(|&v| cb.nearest(v)).collect(),
            None => x.to_vec(),
        };
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.dims.n_out()];
            for (u, zu) in z.iter_mut().enumerate() {
                let mut a = layer.b[layer.dims.channel_of_output(u)];
                layer.dims.for_each_connection(u, |wi, ii| a += layer.w[wi] * h[ii]);
                *zu = a;
            }
            let act = layer.spec.activation;
            let cb = q.and_then(|q| q.hidden.get(l)).filter(|_| l + 1 < n);
            let out: Vec<f64> = match cb {
                Some(cb) => z.iter().map(|&v| cb.nearest(act.apply(v))).collect(),
                None => z.iter().map(|&v| act.apply(v)).collect(),
            };
            inputs.push(std::mem::replace(&mut h, out));
            pre.push(z);
        }
        Cache { inputs, pre, logits: h }
    }

    pub fn logits(&self, x: &[f64], q: Option<&ForwardQuant>) -> Vec<f64> {
        self.forward_cache(x, q).logits
    }

    pub fn predict(&self, x: &[f64], q: Option<&ForwardQuant>) -> usize {
        let z = self.logits(x, q);
        (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b })
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize], q: Option<&ForwardQuant>) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| {
                let (_, ce) = softmax_ce(&self.logits(x, q), y);
                ce
            })
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean loss and its gradient; activation quantizers use the
    /// straight-through rule.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[usize], q: Option<&ForwardQuant>) -> (f64, Grads) {
        let mut g = self.zero_grads();
        let mut total = 0.0;
        let inv = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            let c = self.forward_cache(x, q);
            let (p, ce) = softmax_ce(&c.logits, y);
            total += ce;
            let mut d: Vec<f64> = p;
            d[y] -= 1.0;
            d.iter_mut().for_each(|v| *v *= inv);
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let act = layer.spec.activation;
                let dz: Vec<f64> = d.iter().zip(&c.pre[l]).map(|(g, &z)| g * act.derivative(z)).collect();
                let input = &c.inputs[l];
                let mut dx = vec![0.0; input.len()];
                let gw = &mut g.w[l];
                for (u, &du) in dz.iter().enumerate() {
                    if du == 0.0 {
                        continue;
                    }
                    g.b[l][layer.dims.channel_of_output(u)] += du;
                    layer.dims.for_each_connection(u, |wi, ii| {
                        gw[wi] += du * input[ii];
                        dx[ii] += du * layer.w[wi];
                    });
                }
                d = dx;
            }
        }
        (total * inv, g)
    }
}

/// Softmax probabilities and cross-entropy for label `y`.
fn softmax_ce(z: &[f64], y: usize) -> (Vec<f64>, f64) {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();
    (p, -(z[y] - m - s.ln()))
}

//! Quantization-aware training for toy problems: straight-through
//! activation quantization and a weight requantization event every `S`
//! steps, with free-floating weights in between.

mod data;
mod net;

pub use data::{blobs, load_idx, two_moons, Dataset};
pub use net::{ste_activation, ForwardQuant, Grads, TrainLayer, TrainNet};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{modelfree_init, modelfree_requantize, Codebook, ModelFreeState};
use crate::model::Activation;
use crate::codebook::DEFAULT_SUBSAMPLE;
use crate::quantized::{activation_codebook, assign_weights, ActMethod, WeightMethod};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub weights: WeightMethod,
    /// STE activation quantization; `None` keeps activations continuous.
    pub activations: Option<ActMethod>,
    /// Requantization period `S` in steps.
    pub period: usize,
    /// When false no requantize event ever runs (ablation).
    #[serde(default = "yes")]
    pub requantize: bool,
    /// Also quantize the network input with the first layer's activation levels.
    #[serde(default = "yes")]
    pub quantize_input: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs trained without any quantization.
    pub float_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub quant: Option<QuantSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            float_epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
            quant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub quantized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub step: usize,
    /// Largest number of distinct parameter values in any codebook scope.
    pub distinct_params: usize,
    /// Level budget of that scope.
    pub n_w: usize,
    /// Validation accuracy right after the event.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: TrainNet,
    pub quant: Option<ForwardQuant>,
    pub epochs: Vec<EpochLog>,
    pub events: Vec<EventLog>,
    pub steps: usize,
}

impl TrainResult {
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        accuracy(&self.net, data, self.quant.as_ref())
    }

    /// Per-epoch CSV log.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("epoch,step,loss,train_acc,val_acc,quantized\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.step, e.loss, e.train_acc, e.val_acc, e.quantized
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn accuracy(net: &TrainNet, data: &Dataset, q: Option<&ForwardQuant>) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let ok = data.x.iter().zip(&data.y).filter(|(x, &y)| net.predict(x, q) == y).count();
    ok as f64 / data.len() as f64
}

/// Frozen codebook state between events.
enum Quantizer {
    /// One codebook per layer (shared instances repeat), nearest-level snap.
    Snap(Vec<Codebook>),
    ModelFree(Vec<ModelFreeState>),
}

fn layer_values(l: &TrainLayer) -> Vec<f64> {
    l.w.iter().chain(&l.b).copied().collect()
}

fn set_layer_values(l: &mut TrainLayer, v: &[f64]) {
    let n = l.w.len();
    l.w.copy_from_slice(&v[..n]);
    l.b.copy_from_slice(&v[n..]);
}

fn distinct_count(v: impl Iterator<Item = f64>) -> usize {
    let mut d: Vec<f64> = v.collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d.len()
}

impl Quantizer {
    fn init(net: &mut TrainNet, method: WeightMethod, seed: u64) -> Result<Self> {
        if let WeightMethod::Modelfree { n_w, center } = method {
            let states = net
                .layers
                .iter()
                .map(|l| modelfree_init(&layer_values(l), n_w, center))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Quantizer::ModelFree(states));
        }
        let asg = assign_weights(&net.to_model()?, method, seed, DEFAULT_SUBSAMPLE)?;
        Ok(Quantizer::Snap(asg.into_iter().map(|a| a.occupied).collect()))
    }

    fn apply(&self, net: &mut TrainNet) -> Result<()> {
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let v = layer_values(layer);
            let q = match self {
                Quantizer::Snap(cbs) => v.iter().map(|&x| cbs[l].nearest(x)).collect(),
                Quantizer::ModelFree(st) => modelfree_requantize(&v, &st[l])?,
            };
            set_layer_values(layer, &q);
        }
        Ok(())
    }

    /// `(distinct values, level budget)` of the worst scope.
    fn occupancy(&self, net: &TrainNet, method: WeightMethod) -> (usize, usize) {
        match (self, method) {
            (Quantizer::ModelFree(_), WeightMethod::Modelfree { n_w, .. }) => {
                let d = net.layers.iter().map(|l| distinct_count(layer_values(l).into_iter())).max();
                (d.unwrap_or(0), n_w)
            }
            (Quantizer::Snap(cbs), _) => {
                let d = distinct_count(net.layers.iter().flat_map(layer_values));
                let budget = match method {
                    WeightMethod::Kmeans { n_w } | WeightMethod::Laplacian { n_w } => n_w,
                    _ => cbs.first().map_or(0, Codebook::len),
                };
                (d, budget)
            }
            _ => (0, 0),
        }
    }
}

fn forward_quant(net: &TrainNet, method: Option<ActMethod>, quantize_input: bool) -> Result<Option<ForwardQuant>> {
    let Some(m) = method else { return Ok(None) };
    let n = net.layers.len();
    let hidden = net.layers[..n.saturating_sub(1)]
        .iter()
        .map(|l| activation_codebook(l.spec.activation, m))
        .collect::<Result<Vec<_>>>()?;
    let input = if quantize_input {
        let act = net.layers[0].spec.activation;
        if act == Activation::None {
            return Err(Error::InvalidParam("input quantization needs a bounded first-layer activation".into()));
        }
        Some(activation_codebook(act, m)?)
    } else {
        None
    };
    Ok(Some(ForwardQuant { input, hidden }))
}

/// Mini-batch SGD with momentum. Float epochs come first; the quantized
/// phase starts with a requantize event, repeats it every `S` steps and
/// ends with one, so the returned parameters are codebook levels.
pub fn train(net: TrainNet, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    if cfg.batch_size == 0 || train_set.is_empty() {
        return Err(Error::InvalidParam("training needs a non-empty dataset and batch size >= 1".into()));
    }
    if let Some(q) = &cfg.quant {
        if q.period == 0 {
            return Err(Error::InvalidParam("requantization period S must be >= 1".into()));
        }
    }
    if train_set.n_features() != net.layers[0].dims.n_in() {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("dataset has {} features, network expects {}", train_set.n_features(), net.layers[0].dims.n_in()),
        });
    }
    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vel = net.zero_grads();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut events = Vec::new();
    let mut quantizer: Option<Quantizer> = None;
    let mut fq: Option<ForwardQuant> = None;
    let mut step = 0usize;
    let mut since_event = 0usize;

    let event = |net: &mut TrainNet, q: &Quantizer, step: usize, fq: Option<&ForwardQuant>, events: &mut Vec<EventLog>, method| -> Result<()> {
        q.apply(net)?;
        let (d, n_w) = q.occupancy(net, method);
        events.push(EventLog {
            step,
            distinct_params: d,
            n_w,
            val_acc: (!val_set.is_empty()).then(|| accuracy(net, val_set, fq)),
        });
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let quant_phase = cfg.quant.is_some() && epoch >= cfg.float_epochs;
        if let (true, Some(qs), None) = (quant_phase, cfg.quant.as_ref(), quantizer.as_ref()) {
            fq = forward_quant(&net, qs.activations, qs.quantize_input)?;
            if qs.requantize {
                let q = Quantizer::init(&mut net, qs.weights, cfg.seed)?;
                event(&mut net, &q, step, fq.as_ref(), &mut events, qs.weights)?;
                quantizer = Some(q);
            }
            since_event = 0;
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train_set.x[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_set.y[i]).collect();
            let (loss, g) = net.loss_and_grad(&xs, &ys, fq.as_ref());
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    msg: format!("loss is {loss}"),
                });
            }
            for (l, layer) in net.layers.iter_mut().enumerate() {
                for ((w, v), gw) in layer.w.iter_mut().zip(&mut vel.w[l]).zip(&g.w[l]) {
                    *v = cfg.momentum * *v - cfg.lr * gw;
                    *w += *v;
                }
                for ((b, v), gb) in layer.b.iter_mut().zip(&mut vel.b[l]).zip(&g.b[l]) {
                    *v = cfg.momentum * *v - cfg.lr * gb;
                    *b += *v;
                }
            }
            if net.layers.iter().any(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite())) {
                return Err(Error::Training {
                    step,
                    msg: "non-finite parameter".into(),
                });
            }
            step += 1;
            loss_sum += loss;
            batches += 1;
            if let (Some(q), Some(qs)) = (&quantizer, &cfg.quant) {
                since_event += 1;
                if since_event == qs.period {
                    event(&mut net, q, step, fq.as_ref(), &mut events, qs.weights)?;
                    since_event = 0;
                }
            }
        }
        epochs.push(EpochLog {
            epoch,
            step,
            loss: loss_sum / batches as f64,
            train_acc: accuracy(&net, train_set, fq.as_ref()),
            val_acc: accuracy(&net, val_set, fq.as_ref()),
            quantized: quant_phase,
        });
    }
    if let (Some(q), Some(qs)) = (&quantizer, &cfg.quant) {
        if since_event != 0 {
            event(&mut net, q, step, fq.as_ref(), &mut events, qs.weights)?;
        }
    }
    Ok(TrainResult {
        net,
        quant: fq,
        epochs,
        events,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CenterMode;

    fn tiny() -> (Dataset, Dataset) {
        two_moons(200, 0.1, 1).unwrap().split(0.25, 2)
    }

    #[test]
    fn period_one_keeps_levels() {
        let (tr, va) = tiny();
        let net = TrainNet::mlp(&[2, 8, 2], Activation::Tanh, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            float_epochs: 1,
            quant: Some(QuantSpec {
                weights: WeightMethod::Kmeans { n_w: 4 },
                activations: None,
                period: 1,
                requantize: true,
                quantize_input: false,
            }),
            ..TrainConfig::default()
        };
        let r = train(net, &tr, &va, &cfg).unwrap();
        assert_eq!(r.events.len(), 1 + 2 * tr.len().div_ceil(32));
        assert!(r.events.iter().all(|e| e.distinct_params <= 4));
    }

    #[test]
    fn modelfree_events_keep_budget() {
        let (tr, va) = tiny();
        let net = TrainNet::mlp(&[2, 8, 2], Activation::Tanh, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            float_epochs: 1,
            quant: Some(QuantSpec {
                weights: WeightMethod::Modelfree {
                    n_w: 5,
                    center: CenterMode::Mean,
                },
                activations: Some(ActMethod::Linear { n_a: 8 }),
                period: 2,
                requantize: true,
                quantize_input: false,
            }),
            ..TrainConfig::default()
        };
        let r = train(net, &tr, &va, &cfg).unwrap();
        assert!(r.events.iter().all(|e| e.distinct_params <= 5));
    }

    #[test]
    fn divergence_reports_step() {
        let (tr, va) = tiny();
        let mut net = TrainNet::mlp(&[2, 8, 2], Activation::Tanh, 0).unwrap();
        net.layers[1].w[0] = f64::INFINITY;
        match train(net, &tr, &va, &TrainConfig::default()) {
            Err(Error::Training { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.steps)),
        }
    }

    #[test]
    fn zero_period_rejected() {
        let (tr, va) = tiny();
        let net = TrainNet::mlp(&[2, 4, 2], Activation::Tanh, 0).unwrap();
        let cfg = TrainConfig {
            quant: Some(QuantSpec {
                weights: WeightMethod::Octave { n_q: 2, n_o: 2 },
                activations: None,
                period: 0,
                requantize: true,
                quantize_input: false,
            }),
            ..TrainConfig::default()
        };
        assert!(train(net, &tr, &va, &cfg).is_err());
    }
}

//! Octave/octave models and the `.logq` file format.
//!
//! Weights are stored per output channel as a stream of non-zero entries
//! `(kernel position, code)` with `code = neg << 31 | k << 16 | n`; weights
//! that quantize to zero are dropped. Bias codes use `0xFFFF_FFFF` for zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LogGrid, LogTables, LogValue};
use crate::codebook::{OctaveCode, OctaveCodebook, Scheme};
use crate::container::{self, Section, SectionWriter};
use crate::fold::fold_model;
use crate::model::{Activation, FloatModel, LayerDims};
use crate::quantized::{assign_weights, WeightMethod};
use crate::util::{ceil_log2, ceil_pow2_exp};
use crate::{Error, Result};

pub const LOGQ_MAGIC: &[u8; 4] = b"LOGQ";
pub const LOGQ_VERSION: u32 = 1;
/// Spare accumulator bits required above the largest single term.
pub const MIN_HEADROOM_BITS: u32 = 16;
const ZERO_CODE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogConfig {
    pub n_qw: u32,
    pub n_ow: u32,
    pub n_qa: u32,
    pub n_oa: u32,
    /// Activation whose grid quantizes the network input; defaults to the
    /// first layer's activation.
    #[serde(default)]
    pub input_activation: Option<Activation>,
}

impl LogConfig {
    pub fn new(n_qw: u32, n_ow: u32, n_qa: u32, n_oa: u32) -> Self {
        LogConfig {
            n_qw,
            n_ow,
            n_qa,
            n_oa,
            input_activation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLayer {
    pub dims: LayerDims,
    pub activation: Activation,
    pub is_final: bool,
    pub has_bias: bool,
    /// Non-zero weights kept in the streams.
    pub n_stream: usize,
    /// Per output channel: `(kernel position, weight)` for non-zero weights,
    /// weight indices at `N_{q;w}` resolution.
    #[serde(skip)]
    pub streams: Vec<Vec<(u32, LogValue)>>,
    #[serde(skip)]
    pub bias: Vec<LogValue>,
}

impl LogLayer {
    pub fn kernel_len(&self) -> usize {
        self.dims.n_weights() / self.dims.output.c.max(1)
    }

    /// Dense weight values (zeros restored) in real units.
    pub fn weight_values(&self, n_qw: u32) -> Vec<f64> {
        let k = self.kernel_len();
        let mut w = vec![0.0; self.dims.n_weights()];
        for (c, s) in self.streams.iter().enumerate() {
            for &(p, v) in s {
                w[c * k + p as usize] = v.value(n_qw);
            }
        }
        w
    }

    pub fn bias_values(&self, n_qw: u32) -> Vec<f64> {
        self.bias.iter().map(|b| b.value(n_qw)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogQuantModel {
    pub config: LogConfig,
    pub weight_grid: LogGrid,
    pub act_grid: LogGrid,
    pub input_activation: Activation,
    pub tables: LogTables,
    /// Accumulator bits left above the largest single term.
    pub headroom: u32,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LogLayer>,
}

fn code_to_value(grid: &LogGrid, code: OctaveCode) -> LogValue {
    LogValue {
        sign: if code.neg { -1 } else { 1 },
        index: grid.n_q as i32 * grid.top_exp - (code.k * grid.n_q + code.n) as i32,
    }
}

fn value_to_code(grid: &LogGrid, v: LogValue) -> u32 {
    if v.sign == 0 {
        return ZERO_CODE;
    }
    let j = (grid.n_q as i32 * grid.top_exp - v.index) as u32;
    let k = (j - 1) / grid.n_q;
    let n = j - k * grid.n_q;
    ((v.sign < 0) as u32) << 31 | k << 16 | n
}

fn decode_code(grid: &LogGrid, code: u32) -> Option<LogValue> {
    if code == ZERO_CODE {
        return Some(LogValue::ZERO);
    }
    let k = (code >> 16) & 0x7FFF;
    let n = code & 0xFFFF;
    if k >= grid.n_o || n == 0 || n > grid.n_q {
        return None;
    }
    Some(code_to_value(
        grid,
        OctaveCode {
            neg: code >> 31 == 1,
            k,
            n,
        },
    ))
}

/// Activations the log path can apply: non-negative and bounded.
fn activation_top_exp(act: Activation) -> Option<i32> {
    match act.bounds() {
        Some((lo, hi)) if lo >= 0.0 => Some(ceil_pow2_exp(hi)),
        _ => None,
    }
}

/// Fold, quantize weights to a shared octave codebook and encode everything
/// in sign/log-index form.
pub fn quantize_log_model(model: &FloatModel, cfg: &LogConfig) -> Result<LogQuantModel> {
    let folded = fold_model(model)?;
    let asg = assign_weights(
        &folded,
        WeightMethod::Octave {
            n_q: cfg.n_qw,
            n_o: cfg.n_ow,
        },
        0,
        0,
    )?;
    let first = asg
        .first()
        .ok_or_else(|| Error::InvalidParam("cannot quantize a model without layers".into()))?;
    let k_max_exp = match first.codebook.scheme() {
        Scheme::Octave { k_max_exp, .. } => *k_max_exp,
        _ => return Err(Error::Engine("octave weight codebook expected".into())),
    };
    let ocb = OctaveCodebook::with_exponent(cfg.n_qw, cfg.n_ow, k_max_exp)?;
    let wgrid = LogGrid::new(cfg.n_qw, cfg.n_ow, k_max_exp)?;
    let to_log = |v: f64| match ocb.code(ocb.assign(v)) {
        None => LogValue::ZERO,
        Some(c) => code_to_value(&wgrid, c),
    };
    let layers = folded
        .layers()
        .iter()
        .zip(folded.dims())
        .zip(&asg)
        .enumerate()
        .map(|(l, ((spec, dims), a))| {
            let n_w = dims.n_weights();
            let k = n_w / dims.output.c.max(1);
            let mut streams = vec![Vec::new(); dims.output.c];
            for (i, &v) in a.values[..n_w].iter().enumerate() {
                let lv = to_log(v);
                if !lv.is_zero() {
                    streams[i / k].push(((i % k) as u32, lv));
                }
            }
            let bias = if spec.bias.is_some() {
                a.values[n_w..].iter().map(|&v| to_log(v)).collect()
            } else {
                vec![LogValue::ZERO; dims.output.c]
            };
            LogLayer {
                dims: *dims,
                activation: spec.activation,
                is_final: l + 1 == folded.layers().len(),
                has_bias: spec.bias.is_some(),
                n_stream: streams.iter().map(Vec::len).sum(),
                streams,
                bias,
            }
        })
        .collect();
    let input_activation = cfg.input_activation.unwrap_or(folded.layers()[0].activation);
    LogQuantModel::assemble(*cfg, wgrid, input_activation, folded.input_shape().to_vec(), layers)
}

impl LogQuantModel {
    fn assemble(
        config: LogConfig,
        weight_grid: LogGrid,
        input_activation: Activation,
        input_shape: Vec<usize>,
        layers: Vec<LogLayer>,
    ) -> Result<Self> {
        let s_exp = activation_top_exp(input_activation).ok_or_else(|| {
            Error::InvalidParam(format!(
                "the log path needs a bounded non-negative input activation, got {input_activation:?}"
            ))
        })?;
        for (l, layer) in layers.iter().enumerate() {
            if layer.is_final {
                continue;
            }
            if activation_top_exp(layer.activation) != Some(s_exp) {
                return Err(Error::InvalidParam(format!(
                    "layer {l}: the log path needs every hidden activation to share the input's range, got {:?}",
                    layer.activation
                )));
            }
        }
        let act_grid = LogGrid::new(config.n_qa, config.n_oa, s_exp)?;
        let tables = LogTables::new(config.n_qw, config.n_qa, config.n_oa, s_exp)?;
        let term_bits = tables.frac_bits() as i32 + weight_grid.top_exp.max(0) + 1;
        let headroom = 63 - term_bits;
        if headroom < MIN_HEADROOM_BITS as i32 {
            return Err(Error::Engine(format!(
                "accumulator headroom {headroom} bits is below the required {MIN_HEADROOM_BITS}"
            )));
        }
        let headroom = headroom as u32;
        for (l, layer) in layers.iter().enumerate() {
            let terms = layer.kernel_len() as u64 + 1;
            if ceil_log2(terms) >= headroom {
                return Err(Error::Engine(format!("layer {l}: {terms} terms could overflow the accumulator")));
            }
        }
        Ok(LogQuantModel {
            config,
            weight_grid,
            act_grid,
            input_activation,
            tables,
            headroom,
            input_shape,
            layers,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(self.input_len(), |l| l.dims.n_out())
    }

    pub fn weight_values(&self, l: usize) -> Vec<f64> {
        self.layers[l].weight_values(self.config.n_qw)
    }

    pub fn bias_values(&self, l: usize) -> Vec<f64> {
        self.layers[l].bias_values(self.config.n_qw)
    }

    /// Bytes of the serialized weight stream of layer `l`.
    pub fn stream_bytes(&self, l: usize) -> usize {
        let layer = &self.layers[l];
        4 * layer.streams.len() + 8 * layer.n_stream
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = SectionWriter::default();
        let t_q = w.push(&container::u64s_to_bytes(&self.tables.t_q));
        let t_q_inv = w.push(&container::u32s_to_bytes(&self.tables.t_q_inv));
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut words = Vec::with_capacity(layer.streams.len() + 2 * layer.n_stream);
            for s in &layer.streams {
                words.push(s.len() as u32);
                for &(p, v) in s {
                    words.push(p);
                    words.push(value_to_code(&self.weight_grid, v));
                }
            }
            let bias: Vec<u32> = layer.bias.iter().map(|&b| value_to_code(&self.weight_grid, b)).collect();
            layers.push(LayerHeader {
                layer: layer.clone(),
                weights: w.push(&container::u32s_to_bytes(&words)),
                bias: w.push(&container::u32s_to_bytes(&bias)),
            });
        }
        let header = Header {
            format: "lutnet-log".into(),
            config: self.config,
            weight_grid: self.weight_grid,
            act_grid: self.act_grid,
            input_activation: self.input_activation,
            tables: self.tables.clone(),
            headroom: self.headroom,
            input_shape: self.input_shape.clone(),
            t_q,
            t_q_inv,
            layers,
        };
        w.finish(LOGQ_MAGIC, LOGQ_VERSION, &header)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let c = container::parse(bytes, LOGQ_MAGIC, path)?;
        if c.version != LOGQ_VERSION {
            return Err(Error::format(path, format!("unsupported version {}", c.version)));
        }
        let h: Header = serde_json::from_slice(c.header).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let t_q = container::bytes_to_u64s(c.section(h.t_q, path, "T_q")?, path, "T_q")?;
        let t_q_inv = container::bytes_to_u32s(c.section(h.t_q_inv, path, "T_q_inv")?, path, "T_q_inv")?;
        let tables = LogTables::from_parts(h.tables, t_q, t_q_inv).map_err(|e| Error::format(path, e.to_string()))?;
        let wg = h.weight_grid;
        if wg.n_q != h.config.n_qw || wg.n_o != h.config.n_ow {
            return Err(Error::format(path, "weight grid does not match the configuration"));
        }
        let mut layers = Vec::with_capacity(h.layers.len());
        for (i, lh) in h.layers.into_iter().enumerate() {
            let bad = |m: &str| Error::format(path, format!("layer {i}: {m}"));
            let mut layer = lh.layer;
            let words = container::bytes_to_u32s(c.section(lh.weights, path, "weights")?, path, "weights")?;
            let k = layer.kernel_len();
            let mut pos = 0;
            let mut streams = Vec::with_capacity(layer.dims.output.c);
            for _ in 0..layer.dims.output.c {
                let n = *words.get(pos).ok_or_else(|| bad("weight stream truncated"))? as usize;
                pos += 1;
                let pairs = words.get(pos..pos + 2 * n).ok_or_else(|| bad("weight stream truncated"))?;
                pos += 2 * n;
                let mut s = Vec::with_capacity(n);
                for p in pairs.chunks_exact(2) {
                    if p[0] as usize >= k {
                        return Err(bad("kernel position out of range"));
                    }
                    match decode_code(&wg, p[1]) {
                        Some(v) if !v.is_zero() => s.push((p[0], v)),
                        _ => return Err(bad("invalid weight code")),
                    }
                }
                streams.push(s);
            }
            if pos != words.len() {
                return Err(bad("trailing data after weight streams"));
            }
            let bias_words = container::bytes_to_u32s(c.section(lh.bias, path, "bias")?, path, "bias")?;
            if bias_words.len() != layer.dims.output.c {
                return Err(bad("bias count does not match the output channels"));
            }
            layer.bias = bias_words
                .iter()
                .map(|&b| decode_code(&wg, b).ok_or_else(|| bad("invalid bias code")))
                .collect::<Result<_>>()?;
            layer.streams = streams;
            if layer.n_stream != layer.streams.iter().map(Vec::len).sum::<usize>() {
                return Err(bad("stream length does not match the header"));
            }
            layers.push(layer);
        }
        let m = LogQuantModel::assemble(h.config, wg, h.input_activation, h.input_shape, layers)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if m.tables != tables || m.act_grid != h.act_grid || m.headroom != h.headroom {
            return Err(Error::format(path, "stored tables do not match their parameters"));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        LogQuantModel::from_bytes(&container::read_file(path)?, path)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: LogConfig,
    weight_grid: LogGrid,
    act_grid: LogGrid,
    input_activation: Activation,
    tables: LogTables,
    headroom: u32,
    input_shape: Vec<usize>,
    t_q: Section,
    t_q_inv: Section,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    #[serde(flatten)]
    layer: LogLayer,
    weights: Section,
    bias: Section,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;

    fn toy() -> FloatModel {
        let l0 = LayerSpec::dense(3, 2, vec![0.5, -0.25, 0.0, 1.0, 0.7, -2.0], Some(vec![0.1, 0.0]), Activation::Relu6);
        let l1 = LayerSpec::dense(2, 2, vec![1.0, -1.0, 0.3, 0.6], None, Activation::None);
        FloatModel::new(vec![3], vec![l0, l1]).unwrap()
    }

    #[test]
    fn codes_round_trip() {
        let g = LogGrid::new(8, 4, 1).unwrap();
        for index in g.bottom()..=g.top() {
            for sign in [-1, 1] {
                let v = LogValue { sign, index };
                assert_eq!(decode_code(&g, value_to_code(&g, v)), Some(v));
            }
        }
        assert_eq!(decode_code(&g, ZERO_CODE), Some(LogValue::ZERO));
        assert_eq!(decode_code(&g, 9), None);
    }

    #[test]
    fn zero_weights_dropped() {
        let m = quantize_log_model(&toy(), &LogConfig::new(4, 4, 8, 3)).unwrap();
        assert_eq!(m.layers[0].n_stream, 5);
        assert_eq!(m.layers[0].streams[0].len(), 2);
        assert!(m.layers[1].bias.iter().all(|b| b.is_zero()));
        assert_eq!(m.act_grid.top_exp, 3);
    }

    #[test]
    fn file_round_trip() {
        let m = quantize_log_model(&toy(), &LogConfig::new(4, 4, 8, 3)).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = LogQuantModel::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 1] = 0x7F;
        bad[n - 2] = 0xFF;
        assert!(LogQuantModel::from_bytes(&bad, Path::new("mem")).is_err());
        assert!(LogQuantModel::from_bytes(&bytes[..n - 3], Path::new("mem")).is_err());
    }

    #[test]
    fn rejects_tanh() {
        let mut f = toy().into_layers();
        f[0].activation = Activation::Tanh;
        let f = FloatModel::new(vec![3], f).unwrap();
        assert!(quantize_log_model(&f, &LogConfig::new(4, 4, 8, 3)).is_err());
    }
}

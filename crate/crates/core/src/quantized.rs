//! Quantized models for the product-LUT engine: construction from a float
//! model and the `.lutq` file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{
    kmeans_1d, laplacian_centers, laplacian_w_max, modelfree_init, modelfree_requantize, octave_activations, octave_codebook,
    uniform_linear_activations, CenterMode, Codebook, OctaveCodebook, Scheme, DEFAULT_SUBSAMPLE,
};
use crate::container::{self, Section, SectionWriter};
use crate::fold::fold_model;
use crate::model::{Activation, FloatModel, LayerDims};
use crate::tables::{
    bias_terms_exact, build_activation_table, pack_weight_indices, ActivationTable, LutLayout, PackedIndices,
    ProductLut,
};
use crate::{Error, Result};

pub const LUTQ_MAGIC: &[u8; 4] = b"LUTQ";
pub const LUTQ_VERSION: u32 = 1;
pub const DEFAULT_S: u32 = 16;
pub const DEFAULT_DX: f64 = 0.02;
/// LUT entries are stored as i32.
pub const LUT_ENTRY_BITS: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum WeightMethod {
    Kmeans { n_w: usize },
    Laplacian { n_w: usize },
    Modelfree { n_w: usize, center: CenterMode },
    Octave { n_q: u32, n_o: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "lowercase")]
pub enum ActMethod {
    Linear { n_a: usize },
    Octave { n_q: u32, n_o: u32 },
}

/// How the arithmetic shift by `s` turns the accumulator into a table index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftRounding {
    /// Plain floor.
    Floor,
    /// Floor after adding `2^{s-1}`, folded into the hidden-layer bias terms
    /// so the hot path is unchanged.
    #[default]
    Nearest,
}

impl ShiftRounding {
    pub fn offset(self, s: u32) -> i64 {
        match self {
            ShiftRounding::Floor => 0,
            ShiftRounding::Nearest => 1i64 << (s - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeConfig {
    pub weights: WeightMethod,
    pub activations: ActMethod,
    pub s: u32,
    /// Δx for activations whose level spacing is not uniform-linear relu6.
    pub dx: f64,
    pub seed: u64,
    pub subsample: usize,
    pub rounding: ShiftRounding,
    /// For octave weights: `N_q` base rows with shifts instead of one row per level.
    pub compact_octave: bool,
    /// Activation whose codebook quantizes the network input; defaults to the
    /// first layer's activation.
    pub input_activation: Option<Activation>,
}

impl QuantizeConfig {
    pub fn new(weights: WeightMethod, activations: ActMethod) -> Self {
        QuantizeConfig {
            weights,
            activations,
            s: DEFAULT_S,
            dx: DEFAULT_DX,
            seed: 0,
            subsample: DEFAULT_SUBSAMPLE,
            rounding: ShiftRounding::default(),
            compact_octave: true,
            input_activation: None,
        }
    }
}

/// Per-layer weight codebook and the quantized parameter values (weights
/// then biases), every value being a level of the codebook.
#[derive(Debug, Clone)]
pub struct WeightAssignment {
    /// Table codebook; may hold an extra 1.0 level for the readout.
    pub codebook: Codebook,
    /// Levels parameters are snapped to (the codebook without an inserted 1.0).
    pub occupied: Codebook,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub dims: LayerDims,
    pub activation: Activation,
    pub weight_codebook: usize,
    pub input_codebook: usize,
    /// `None` for the final layer, which emits raw accumulators.
    pub output_codebook: Option<usize>,
    pub dx: f64,
    pub n_weights: usize,
    pub has_bias: bool,
    pub lut: ProductLut,
    pub act_table: Option<ActivationTable>,
    /// Weight indices (output-major, input-minor) followed by bias indices.
    pub indices: PackedIndices,
    #[serde(skip)]
    pub bias_terms: Vec<i64>,
}

impl QuantLayer {
    pub fn weight_index(&self, widx: usize) -> usize {
        self.indices.get(widx) as usize
    }

    pub fn bias_index(&self, c: usize) -> Option<usize> {
        self.has_bias.then(|| self.indices.get(self.n_weights + c) as usize)
    }

    pub fn is_final(&self) -> bool {
        self.output_codebook.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub s: u32,
    pub rounding: ShiftRounding,
    pub input_shape: Vec<usize>,
    pub codebooks: Vec<Codebook>,
    pub input_codebook: usize,
    pub layers: Vec<QuantLayer>,
    pub config: Option<QuantizeConfig>,
}

fn intern(books: &mut Vec<Codebook>, cb: Codebook) -> usize {
    match books.iter().position(|b| *b == cb) {
        Some(i) => i,
        None => {
            books.push(cb);
            books.len() - 1
        }
    }
}

fn layer_params(model: &FloatModel, l: usize) -> Vec<f64> {
    let layer = &model.layers()[l];
    let mut v: Vec<f64> = layer.weights.iter().map(|&w| w as f64).collect();
    if let Some(b) = &layer.bias {
        v.extend(b.iter().map(|&x| x as f64));
    }
    v
}

fn distinct(values: &[f64]) -> Vec<f64> {
    let mut d = values.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn snap(cb: &Codebook, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| cb.nearest(v)).collect()
}

/// Build the weight codebooks for `model` (already folded) under `method`.
/// Scopes whose parameters already take at most `N_w` distinct values keep
/// those values.
pub fn assign_weights(model: &FloatModel, method: WeightMethod, seed: u64, subsample: usize) -> Result<Vec<WeightAssignment>> {
    let n = model.layers().len();
    let per_layer: Vec<Vec<f64>> = (0..n).map(|l| layer_params(model, l)).collect();
    let pooled: Vec<f64> = per_layer.iter().flatten().copied().collect();
    let shared = |occupied: Codebook, codebook: Codebook| -> Vec<WeightAssignment> {
        per_layer
            .iter()
            .map(|v| WeightAssignment {
                values: snap(&occupied, v),
                codebook: codebook.clone(),
                occupied: occupied.clone(),
            })
            .collect()
    };
    if pooled.is_empty() {
        return Ok(Vec::new());
    }
    match method {
        WeightMethod::Kmeans { n_w } | WeightMethod::Laplacian { n_w } => {
            let occupied = if distinct(&pooled).len() <= n_w {
                Codebook::new(distinct(&pooled), Scheme::Explicit)?
            } else if let WeightMethod::Kmeans { .. } = method {
                Codebook::from_values(kmeans_1d(&pooled, n_w, subsample, seed)?.centers, Scheme::Kmeans)?
            } else {
                let w_max = laplacian_w_max(&pooled, n_w)?;
                let c = laplacian_centers(n_w, w_max)?;
                Codebook::new(c.centers, Scheme::Laplacian { w_max, scale: c.scale })?
            };
            let table = occupied.clone().with_one();
            Ok(shared(occupied, table))
        }
        WeightMethod::Octave { n_q, n_o } => {
            let v_max = pooled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let v_max = if v_max > 0.0 { v_max } else { 1.0 };
            let cb = octave_codebook(n_q, n_o, v_max)?.into_codebook();
            Ok(shared(cb.clone(), cb))
        }
        WeightMethod::Modelfree { n_w, center } => per_layer
            .iter()
            .enumerate()
            .map(|(l, v)| {
                if distinct(v).len() <= n_w {
                    let occupied = Codebook::new(distinct(v), Scheme::Explicit)?;
                    return Ok(WeightAssignment {
                        codebook: occupied.clone().with_one(),
                        occupied,
                        values: v.clone(),
                    });
                }
                let st = modelfree_init(v, n_w, center).map_err(|e| Error::Codebook(format!("layer {l}: {e}")))?;
                let occupied = Codebook::from_values(st.centers.iter().flatten().copied(), Scheme::ModelFree)?;
                Ok(WeightAssignment {
                    values: modelfree_requantize(v, &st)?,
                    codebook: st.codebook()?,
                    occupied,
                })
            })
            .collect(),
    }
}

pub fn activation_codebook(act: Activation, method: ActMethod) -> Result<Codebook> {
    match method {
        ActMethod::Linear { n_a } => uniform_linear_activations(n_a, act),
        ActMethod::Octave { n_q, n_o } => octave_activations(n_q, n_o, act),
    }
}

/// Δx for a layer whose output activation is `act` with codebook `cb`.
fn layer_dx(act: Activation, cb: &Codebook, dx: f64) -> f64 {
    match (act, cb.scheme()) {
        (Activation::Relu6, Scheme::UniformLinear { .. }) => cb.level(1) - cb.level(0),
        _ => dx,
    }
}

/// Fold, quantize weights and activations, and build every table.
pub fn quantize_model(model: &FloatModel, cfg: &QuantizeConfig) -> Result<QuantizedModel> {
    let folded = fold_model(model)?;
    let assignments = assign_weights(&folded, cfg.weights, cfg.seed, cfg.subsample)?;
    QuantizedModel::build(&folded, &assignments, cfg)
}

impl QuantizedModel {
    /// Assemble tables from a folded model and its weight assignments.
    pub fn build(model: &FloatModel, assignments: &[WeightAssignment], cfg: &QuantizeConfig) -> Result<Self> {
        if model.has_norms() {
            return Err(Error::InvalidParam("model must be folded before building tables".into()));
        }
        let layers = model.layers();
        if layers.is_empty() {
            return Err(Error::InvalidParam("cannot quantize a model without layers".into()));
        }
        if assignments.len() != layers.len() {
            return Err(Error::InvalidParam(format!(
                "{} weight assignments for {} layers",
                assignments.len(),
                layers.len()
            )));
        }
        if cfg.s == 0 || cfg.s > 30 {
            return Err(Error::InvalidParam(format!("s must be in 1..=30, got {}", cfg.s)));
        }
        let mut books = Vec::new();
        let input_act = cfg.input_activation.unwrap_or(layers[0].activation);
        if input_act.bounds().is_none() {
            return Err(Error::InvalidParam(
                "input codebook needs a bounded activation; set input_activation for single-layer models".into(),
            ));
        }
        let input_codebook = intern(&mut books, activation_codebook(input_act, cfg.activations)?);
        let mut prev = input_codebook;
        let mut out = Vec::with_capacity(layers.len());
        for (l, (layer, dims)) in layers.iter().zip(model.dims()).enumerate() {
            let ctx = |e: Error| Error::Table(format!("layer {l}: {e}"));
            let is_final = l + 1 == layers.len();
            let asg = &assignments[l];
            let n_weights = dims.n_weights();
            let n_bias = if layer.bias.is_some() { layer.out_channels } else { 0 };
            if asg.values.len() != n_weights + n_bias {
                return Err(ctx(Error::InvalidParam(format!(
                    "{} quantized values, expected {}",
                    asg.values.len(),
                    n_weights + n_bias
                ))));
            }
            let wcb = &asg.codebook;
            let idx: Vec<u32> = asg
                .values
                .iter()
                .map(|&v| wcb.index_of(v).unwrap_or_else(|| wcb.nearest_index(v)) as u32)
                .collect();
            let indices = pack_weight_indices(&idx, wcb.len()).map_err(ctx)?;
            let (output_codebook, act_table, dx) = if is_final {
                (None, None, 1.0)
            } else {
                let ocb = activation_codebook(layer.activation, cfg.activations).map_err(ctx)?;
                let dx = layer_dx(layer.activation, &ocb, cfg.dx);
                let t = build_activation_table(layer.activation, &ocb, dx).map_err(ctx)?;
                (Some(intern(&mut books, ocb)), Some(t), dx)
            };
            let acts = books[prev].levels().to_vec();
            let lut = match (wcb.scheme(), cfg.compact_octave) {
                (Scheme::Octave { n_q, n_o, k_max_exp }, true) => {
                    let oc = OctaveCodebook::with_exponent(*n_q, *n_o, *k_max_exp)?;
                    ProductLut::build_octave(&oc, &acts, cfg.s, dx, LUT_ENTRY_BITS)
                }
                _ => ProductLut::build_full(wcb.levels(), &acts, cfg.s, dx, LUT_ENTRY_BITS),
            }
            .map_err(ctx)?;
            let bias_terms = if n_bias > 0 {
                let levels: Vec<f64> = idx[n_weights..].iter().map(|&i| wcb.level(i as usize)).collect();
                bias_terms_exact(&levels, cfg.s, dx)
            } else {
                vec![0; layer.out_channels]
            };
            let weight_codebook = intern(&mut books, wcb.clone());
            out.push(QuantLayer {
                dims: *dims,
                activation: layer.activation,
                weight_codebook,
                input_codebook: prev,
                output_codebook,
                dx,
                n_weights,
                has_bias: n_bias > 0,
                lut,
                act_table,
                indices,
                bias_terms,
            });
            if let Some(o) = output_codebook {
                prev = o;
            }
        }
        Ok(QuantizedModel {
            s: cfg.s,
            rounding: cfg.rounding,
            input_shape: model.input_shape().to_vec(),
            codebooks: books,
            input_codebook,
            layers: out,
            config: Some(cfg.clone()),
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(self.input_len(), |l| l.dims.n_out())
    }

    pub fn weight_codebook(&self, l: usize) -> &Codebook {
        &self.codebooks[self.layers[l].weight_codebook]
    }

    pub fn input_codebook(&self) -> &Codebook {
        &self.codebooks[self.input_codebook]
    }

    /// Quantized weight values of layer `l`.
    pub fn weight_levels(&self, l: usize) -> Vec<f64> {
        let cb = self.weight_codebook(l);
        let layer = &self.layers[l];
        (0..layer.n_weights).map(|i| cb.level(layer.weight_index(i))).collect()
    }

    /// Quantized bias values of layer `l` (zeros when the layer has no bias).
    pub fn bias_levels(&self, l: usize) -> Vec<f64> {
        let cb = self.weight_codebook(l);
        let layer = &self.layers[l];
        (0..layer.dims.output.c)
            .map(|c| layer.bias_index(c).map_or(0.0, |i| cb.level(i)))
            .collect()
    }

    /// Number of quantized parameters (weights and biases) in the network.
    pub fn n_net(&self) -> usize {
        self.layers.iter().map(|l| l.indices.len).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = SectionWriter::default();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            layers.push(LayerHeader {
                layer: l.clone(),
                sections: LayerSections {
                    lut: w.push(&container::i32s_to_bytes(&l.lut.entries)),
                    act_table: l
                        .act_table
                        .as_ref()
                        .map(|t| w.push(&container::u16s_to_bytes(&t.entries))),
                    indices: w.push(&l.indices.bytes),
                    bias: w.push(&container::i64s_to_bytes(&l.bias_terms)),
                },
            });
        }
        let header = Header {
            format: "lutnet-quantized".into(),
            s: self.s,
            rounding: self.rounding,
            input_shape: self.input_shape.clone(),
            codebooks: self.codebooks.clone(),
            input_codebook: self.input_codebook,
            config: self.config.clone(),
            layers,
        };
        w.finish(LUTQ_MAGIC, LUTQ_VERSION, &header)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let c = container::parse(bytes, LUTQ_MAGIC, path)?;
        if c.version != LUTQ_VERSION {
            return Err(Error::format(path, format!("unsupported version {}", c.version)));
        }
        let header: Header =
            serde_json::from_slice(c.header).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let mut layers = Vec::with_capacity(header.layers.len());
        for (i, lh) in header.layers.into_iter().enumerate() {
            let bad = |m: String| Error::format(path, format!("layer {i}: {m}"));
            let mut l = lh.layer;
            let s = lh.sections;
            l.lut.entries = container::bytes_to_i32s(c.section(s.lut, path, "LUT")?, path, "LUT")?;
            l.lut.check_entry_count().map_err(|e| bad(e.to_string()))?;
            match (&mut l.act_table, s.act_table) {
                (Some(t), Some(sec)) => {
                    let entries = container::bytes_to_u16s(c.section(sec, path, "activation table")?, path, "activation table")?;
                    *t = ActivationTable::from_parts(t.activation, t.dx, t.k_lo, entries).map_err(|e| bad(e.to_string()))?;
                }
                (None, None) => {}
                _ => return Err(bad("activation table metadata and section disagree".into())),
            }
            let ib = c.section(s.indices, path, "indices")?.to_vec();
            l.indices = PackedIndices::from_bytes(l.indices.bits, l.indices.len, ib).map_err(|e| bad(e.to_string()))?;
            l.bias_terms = container::bytes_to_i64s(c.section(s.bias, path, "bias")?, path, "bias")?;
            if l.bias_terms.len() != l.dims.output.c {
                return Err(bad(format!("{} bias terms for {} channels", l.bias_terms.len(), l.dims.output.c)));
            }
            let n_bias = if l.has_bias { l.dims.output.c } else { 0 };
            if l.indices.len != l.n_weights + n_bias || l.n_weights != l.dims.n_weights() {
                return Err(bad("index count does not match layer dimensions".into()));
            }
            for cb in [Some(l.weight_codebook), Some(l.input_codebook), l.output_codebook].into_iter().flatten() {
                if cb >= header.codebooks.len() {
                    return Err(bad(format!("codebook {cb} out of range")));
                }
            }
            let n_w = header.codebooks[l.weight_codebook].len();
            if l.indices.unpack().iter().any(|&v| v as usize >= n_w) {
                return Err(bad("weight index out of codebook range".into()));
            }
            if l.lut.cols != header.codebooks[l.input_codebook].len() {
                return Err(bad("LUT columns do not match the input codebook".into()));
            }
            if matches!(l.lut.layout, LutLayout::Full) && l.lut.rows != n_w {
                return Err(bad("LUT rows do not match the weight codebook".into()));
            }
            layers.push(l);
        }
        Ok(QuantizedModel {
            s: header.s,
            rounding: header.rounding,
            input_shape: header.input_shape,
            codebooks: header.codebooks,
            input_codebook: header.input_codebook,
            layers,
            config: header.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        QuantizedModel::from_bytes(&container::read_file(path)?, path)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    s: u32,
    rounding: ShiftRounding,
    input_shape: Vec<usize>,
    codebooks: Vec<Codebook>,
    input_codebook: usize,
    #[serde(default)]
    config: Option<QuantizeConfig>,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    #[serde(flatten)]
    layer: QuantLayer,
    sections: LayerSections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSections {
    pub lut: Section,
    pub act_table: Option<Section>,
    pub indices: Section,
    pub bias: Section,
}

//! Table complexity: neural-unit complexity (NUC), network-wide neural
//! complexity (NWNC), LUT entry counts and network bit size.
//!
//! "Entries" always count table length; bit widths only enter
//! [`network_size_bits`].

use serde::{Deserialize, Serialize};

use crate::codebook::Scheme;
use crate::engine_log::LogQuantModel;
use crate::quantized::QuantizedModel;
use crate::tables::declared_entry_bits;
use crate::util::ceil_log2;
use crate::{Error, Result};

/// `N_w · N_a`.
pub fn nuc_modelfree(n_w: usize, n_a: usize) -> usize {
    n_w * n_a
}

/// Per-layer tables summed, even when layers share `N_w`.
pub fn nwnc_modelfree(n_w_per_layer: &[usize], n_a: usize) -> usize {
    n_w_per_layer.iter().map(|&n| nuc_modelfree(n, n_a)).sum()
}

/// `(NUC, LUT entries)` with `LUT = N_q · N_a` and `NUC = LUT + N_o − 1`.
pub fn nuc_octave_linear(n_q: usize, n_o: usize, n_a: usize) -> (usize, usize) {
    let lut = n_q * n_a;
    (lut + n_o.saturating_sub(1), lut)
}

/// Same count with an explicit zero-weight row in the LUT.
pub fn nuc_octave_linear_zero_row(n_q: usize, n_o: usize, n_a: usize) -> (usize, usize) {
    let lut = (n_q + 1) * n_a;
    (lut + n_o.saturating_sub(1), lut)
}

/// `(NUC, table entries)` with tables `max(N_{q;w}, N_{q;a}) + 4 N_{q;a}`
/// and `NUC = tables + N_{o;w} + N_{o;a} − 2`.
pub fn nuc_octave_octave(n_qw: usize, n_ow: usize, n_qa: usize, n_oa: usize) -> (usize, usize) {
    let tables = n_qw.max(n_qa) + 4 * n_qa;
    (tables + (n_ow + n_oa).saturating_sub(2), tables)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSize {
    pub weight_table_bits: u64,
    pub lut_bits: u64,
    pub activation_table_bits: u64,
    pub total_bits: u64,
    /// `32 / ⌈log₂ N_w⌉` against 32-bit float weights.
    pub compression_ratio: f64,
}

impl NetworkSize {
    pub fn weight_table_fraction(&self) -> f64 {
        self.weight_table_bits as f64 / self.total_bits as f64
    }
}

/// `N_net ⌈log₂ N_w⌉ + (s + ⌈log₂ N_x⌉) N_a N_w + N_x ⌈log₂ N_a⌉`.
pub fn network_size_bits(n_net: u64, n_w: u64, n_a: u64, n_x: u64, s: u32) -> NetworkSize {
    network_size_bits_with_lut(n_net, n_w, n_a, n_x, s, n_a * n_w)
}

/// Variant with an explicit LUT entry count (octave layouts store fewer
/// than `N_a · N_w` entries).
pub fn network_size_bits_with_lut(n_net: u64, n_w: u64, n_a: u64, n_x: u64, s: u32, lut_entries: u64) -> NetworkSize {
    let wb = ceil_log2(n_w) as u64;
    let weight_table_bits = n_net * wb;
    let lut_bits = (s as u64 + ceil_log2(n_x) as u64) * lut_entries;
    let activation_table_bits = n_x * ceil_log2(n_a) as u64;
    NetworkSize {
        weight_table_bits,
        lut_bits,
        activation_table_bits,
        total_bits: weight_table_bits + lut_bits + activation_table_bits,
        compression_ratio: 32.0 / wb.max(1) as f64,
    }
}

/// Byte counts of one layer's serialized sections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBytes {
    pub lut: usize,
    pub activation_table: usize,
    pub indices: usize,
    pub bias: usize,
}

impl LayerBytes {
    pub fn total(&self) -> usize {
        self.lut + self.activation_table + self.indices + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerComplexity {
    pub layer: usize,
    pub nuc: usize,
    /// Weight-by-activation products stored (octave layouts: base rows only).
    pub lut_entries: usize,
    /// Readout and scale rows beyond the products.
    pub extra_lut_entries: usize,
    pub activation_table_entries: usize,
    pub n_params: usize,
    pub n_w: usize,
    pub n_a: usize,
    pub bytes: LayerBytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub engine: String,
    /// Quantization parameters echoed from the model.
    pub scheme: serde_json::Value,
    pub layers: Vec<LayerComplexity>,
    pub nuc: usize,
    pub nwnc: usize,
    /// Table entries over all layers as stored.
    pub network_lut_entries: usize,
    pub n_net: usize,
    pub size: NetworkSize,
    /// Bytes of binary sections (everything after the JSON header).
    pub serialized_bytes: usize,
}

fn octave_params(s: &Scheme) -> Option<(usize, usize)> {
    match s {
        Scheme::Octave { n_q, n_o, .. } => Some((*n_q as usize, *n_o as usize)),
        _ => None,
    }
}

/// Report for a product-LUT model. Layers that share both their weight and
/// input codebooks count once toward NWNC.
pub fn lut_report(qm: &QuantizedModel) -> ComplexityReport {
    let mut layers = Vec::with_capacity(qm.layers.len());
    let mut seen: Vec<(usize, usize)> = Vec::new();
    let mut nwnc = 0;
    let mut size = NetworkSize {
        weight_table_bits: 0,
        lut_bits: 0,
        activation_table_bits: 0,
        total_bits: 0,
        compression_ratio: 0.0,
    };
    let mut max_index_bits = 0;
    for (l, layer) in qm.layers.iter().enumerate() {
        let wcb = qm.weight_codebook(l);
        let n_a = qm.codebooks[layer.input_codebook].len();
        let lut_entries = layer.lut.product_entries();
        let nuc = match (octave_params(wcb.scheme()), layer.lut.layout) {
            (Some((n_q, n_o)), crate::tables::LutLayout::Octave { .. }) => nuc_octave_linear(n_q, n_o, n_a).0,
            _ => lut_entries,
        };
        if !seen.contains(&(layer.weight_codebook, layer.input_codebook)) {
            seen.push((layer.weight_codebook, layer.input_codebook));
            nwnc += nuc;
        }
        let n_x = layer.act_table.as_ref().map_or(0, |t| t.n_x());
        let n_out_levels = layer.output_codebook.map_or(0, |o| qm.codebooks[o].len());
        let bits = layer.indices.bits as u64;
        max_index_bits = max_index_bits.max(layer.indices.bits);
        let w_bits = layer.indices.len as u64 * bits;
        let lut_bits = declared_entry_bits(qm.s, n_x) as u64 * layer.lut.entries.len() as u64;
        let act_bits = n_x as u64 * ceil_log2(n_out_levels as u64) as u64;
        size.weight_table_bits += w_bits;
        size.lut_bits += lut_bits;
        size.activation_table_bits += act_bits;
        layers.push(LayerComplexity {
            layer: l,
            nuc,
            lut_entries,
            extra_lut_entries: layer.lut.entries.len() - lut_entries,
            activation_table_entries: n_x,
            n_params: layer.indices.len,
            n_w: wcb.len(),
            n_a,
            bytes: LayerBytes {
                lut: layer.lut.byte_len(),
                activation_table: n_x * 2,
                indices: layer.indices.bytes.len(),
                bias: layer.bias_terms.len() * 8,
            },
        });
    }
    size.total_bits = size.weight_table_bits + size.lut_bits + size.activation_table_bits;
    size.compression_ratio = 32.0 / max_index_bits.max(1) as f64;
    let scheme = match &qm.config {
        Some(c) => serde_json::to_value(c).unwrap_or(serde_json::Value::Null),
        None => serde_json::Value::Null,
    };
    ComplexityReport {
        engine: "lut".into(),
        scheme,
        nuc: layers.iter().map(|l| l.nuc).max().unwrap_or(0),
        nwnc,
        network_lut_entries: layers.iter().map(|l| l.lut_entries + l.extra_lut_entries).sum(),
        n_net: qm.n_net(),
        size,
        serialized_bytes: layers.iter().map(|l| l.bytes.total()).sum(),
        layers,
    }
}

/// Report for an octave/octave model: one `T_q`/`T_q⁻¹` pair serves the
/// whole network, so NWNC equals NUC.
pub fn log_report(m: &LogQuantModel) -> ComplexityReport {
    let c = &m.config;
    let (nuc, tables) = nuc_octave_octave(c.n_qw as usize, c.n_ow as usize, c.n_qa as usize, c.n_oa as usize);
    debug_assert_eq!(tables, m.tables.entries());
    let n_w = 2 * m.weight_grid.len() + 1;
    let n_a = m.act_grid.len() + 1;
    let code_bits = 1 + ceil_log2(c.n_ow as u64) as u64 + ceil_log2(c.n_qw as u64) as u64;
    let layers: Vec<LayerComplexity> = m
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| LayerComplexity {
            layer: l,
            nuc,
            lut_entries: tables,
            extra_lut_entries: 0,
            activation_table_entries: 0,
            n_params: layer.dims.n_weights() + layer.dims.output.c,
            n_w,
            n_a,
            bytes: LayerBytes {
                lut: 0,
                activation_table: 0,
                indices: m.stream_bytes(l),
                bias: 4 * layer.bias.len(),
            },
        })
        .collect();
    let n_stream: u64 = m.layers.iter().map(|l| (l.n_stream + l.bias.len()) as u64).sum();
    let weight_table_bits = n_stream * code_bits;
    let lut_bits = 64 * m.tables.t_q.len() as u64 + 32 * m.tables.t_q_inv.len() as u64;
    let size = NetworkSize {
        weight_table_bits,
        lut_bits,
        activation_table_bits: 0,
        total_bits: weight_table_bits + lut_bits,
        compression_ratio: 32.0 / code_bits as f64,
    };
    let table_bytes = 8 * m.tables.t_q.len() + 4 * m.tables.t_q_inv.len();
    ComplexityReport {
        engine: "log".into(),
        scheme: serde_json::to_value(c).unwrap_or(serde_json::Value::Null),
        nuc,
        nwnc: nuc,
        network_lut_entries: tables,
        n_net: layers.iter().map(|l| l.n_params).sum(),
        size,
        serialized_bytes: table_bytes + layers.iter().map(|l| l.bytes.total()).sum::<usize>(),
        layers,
    }
}

/// Accounting parameters for computing a report without a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum AccountingParams {
    Modelfree { n_w: usize, n_a: usize, layers: usize },
    OctaveLinear { n_q: usize, n_o: usize, n_a: usize },
    OctaveOctave { n_qw: usize, n_ow: usize, n_qa: usize, n_oa: usize },
    Size { n_net: u64, n_w: u64, n_a: u64, n_x: u64, s: u32, lut_entries: Option<u64> },
}

/// Formula results for [`AccountingParams`], as JSON.
pub fn accounting(p: &AccountingParams) -> Result<serde_json::Value> {
    use serde_json::json;
    Ok(match *p {
        AccountingParams::Modelfree { n_w, n_a, layers } => {
            if layers == 0 {
                return Err(Error::InvalidParam("layers must be at least 1".into()));
            }
            json!({"nuc": nuc_modelfree(n_w, n_a), "nwnc": nwnc_modelfree(&vec![n_w; layers], n_a)})
        }
        AccountingParams::OctaveLinear { n_q, n_o, n_a } => {
            let (nuc, lut) = nuc_octave_linear(n_q, n_o, n_a);
            let (nuc_z, lut_z) = nuc_octave_linear_zero_row(n_q, n_o, n_a);
            json!({"nuc": nuc, "nwnc": nuc, "lut_entries": lut,
                   "with_zero_row": {"nuc": nuc_z, "lut_entries": lut_z}})
        }
        AccountingParams::OctaveOctave { n_qw, n_ow, n_qa, n_oa } => {
            let (nuc, tables) = nuc_octave_octave(n_qw, n_ow, n_qa, n_oa);
            json!({"nuc": nuc, "nwnc": nuc, "table_entries": tables})
        }
        AccountingParams::Size { n_net, n_w, n_a, n_x, s, lut_entries } => {
            let r = match lut_entries {
                Some(e) => network_size_bits_with_lut(n_net, n_w, n_a, n_x, s, e),
                None => network_size_bits(n_net, n_w, n_a, n_x, s),
            };
            serde_json::to_value(r)?
        }
    })
}

//! Float checkpoint directories: `manifest.json` plus one little-endian f32
//! blob per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, FloatModel, LayerKind, LayerSpec, NormParams};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_NAME: &str = "lutnet-float";
pub const FORMAT_VERSION: u32 = 1;

/// Used when a checkpoint omits a norm's epsilon.
pub const DEFAULT_NORM_EPSILON: f32 = 1e-3;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    input_shape: Vec<usize>,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    #[serde(flatten)]
    kind: LayerKind,
    in_channels: usize,
    out_channels: usize,
    activation: Activation,
    weight: TensorRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norm: Option<NormEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_norm: Option<NormEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_norm: Option<TensorRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRef {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormEntry {
    #[serde(default)]
    epsilon: Option<f32>,
    gamma: TensorRef,
    beta: TensorRef,
    mean: TensorRef,
    var: TensorRef,
}

pub fn save_float_model(model: &FloatModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let prefix = format!("layer{i}");
        let weight = write_tensor(dir, &format!("{prefix}.weight.bin"), layer.weight_shape(), &layer.weights)?;
        let bias = match &layer.bias {
            Some(b) => Some(write_tensor(dir, &format!("{prefix}.bias.bin"), vec![b.len()], b)?),
            None => None,
        };
        let norm = match &layer.norm {
            Some(n) => Some(write_norm(dir, &format!("{prefix}.norm"), n)?),
            None => None,
        };
        let input_norm = match &layer.input_norm {
            Some(n) => Some(write_norm(dir, &format!("{prefix}.input_norm"), n)?),
            None => None,
        };
        let weight_norm = match &layer.weight_norm {
            Some(s) => Some(write_tensor(dir, &format!("{prefix}.weight_norm.bin"), vec![s.len()], s)?),
            None => None,
        };
        layers.push(LayerEntry {
            kind: layer.kind,
            in_channels: layer.in_channels,
            out_channels: layer.out_channels,
            activation: layer.activation,
            weight,
            bias,
            norm,
            input_norm,
            weight_norm,
        });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        input_shape: model.input_shape().to_vec(),
        layers,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_float_model(dir: impl AsRef<Path>) -> Result<FloatModel> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::format(&path, format!("unknown format '{}'", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", manifest.version)));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in manifest.layers {
        let weights = read_tensor(dir, &entry.weight)?;
        let bias = entry.bias.as_ref().map(|t| read_tensor(dir, t)).transpose()?;
        let norm = entry.norm.as_ref().map(|n| read_norm(dir, n)).transpose()?;
        let input_norm = entry.input_norm.as_ref().map(|n| read_norm(dir, n)).transpose()?;
        let weight_norm = entry.weight_norm.as_ref().map(|t| read_tensor(dir, t)).transpose()?;
        layers.push(LayerSpec {
            kind: entry.kind,
            in_channels: entry.in_channels,
            out_channels: entry.out_channels,
            weights,
            bias,
            activation: entry.activation,
            norm,
            input_norm,
            weight_norm,
        });
    }
    FloatModel::new(manifest.input_shape, layers)
}

fn write_norm(dir: &Path, prefix: &str, n: &NormParams) -> Result<NormEntry> {
    let c = n.channels();
    Ok(NormEntry {
        epsilon: Some(n.epsilon),
        gamma: write_tensor(dir, &format!("{prefix}.gamma.bin"), vec![c], &n.gamma)?,
        beta: write_tensor(dir, &format!("{prefix}.beta.bin"), vec![c], &n.beta)?,
        mean: write_tensor(dir, &format!("{prefix}.mean.bin"), vec![c], &n.mean)?,
        var: write_tensor(dir, &format!("{prefix}.var.bin"), vec![c], &n.var)?,
    })
}

fn read_norm(dir: &Path, n: &NormEntry) -> Result<NormParams> {
    Ok(NormParams {
        gamma: read_tensor(dir, &n.gamma)?,
        beta: read_tensor(dir, &n.beta)?,
        mean: read_tensor(dir, &n.mean)?,
        var: read_tensor(dir, &n.var)?,
        epsilon: n.epsilon.unwrap_or(DEFAULT_NORM_EPSILON),
    })
}

fn write_tensor(dir: &Path, file: &str, shape: Vec<usize>, data: &[f32]) -> Result<TensorRef> {
    write_f32_blob(dir.join(file), data)?;
    Ok(TensorRef {
        file: file.to_string(),
        shape,
    })
}

fn read_tensor(dir: &Path, t: &TensorRef) -> Result<Vec<f32>> {
    let path = dir.join(&t.file);
    let v = read_f32_blob(&path)?;
    let expected = t.shape.iter().product::<usize>();
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            path,
            expected: expected * 4,
            actual: v.len() * 4,
        });
    }
    Ok(v)
}

/// Write little-endian f32 values.
pub fn write_f32_blob(path: impl AsRef<Path>, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a little-endian f32 blob, rejecting partial values and non-finite entries.
pub fn read_f32_blob(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref().to_path_buf();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::LengthMismatch {
            expected: bytes.len() / 4 * 4 + 4,
            actual: bytes.len(),
            path,
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / 4);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite { path, offset: k * 4 });
        }
        out.push(v);
    }
    Ok(out)
}

//! Float model representation and the continuous reference forward pass.
//!
//! Layers form a simple chain. Every tensor between layers is viewed as a
//! `[channels, height, width]` block; a dense layer emits `[n, 1, 1]` and
//! consumes its input flattened in that order.

mod io;

pub use io::{load_float_model, read_f32_blob, save_float_model, write_f32_blob, DEFAULT_NORM_EPSILON};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Non-linearity applied at the output of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu6,
    Tanh,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }

    /// Derivative of the continuous function; relu6 uses 0 at its kinks.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::None => 1.0,
        }
    }

    /// Output range for bounded activations.
    pub fn bounds(self) -> Option<(f64, f64)> {
        match self {
            Activation::Relu6 => Some((0.0, 6.0)),
            Activation::Tanh => Some((-1.0, 1.0)),
            Activation::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn pointwise() -> Self {
        ConvGeometry {
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d(ConvGeometry),
}

/// Batch-norm parameters, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub epsilon: f32,
}

impl NormParams {
    pub fn identity(channels: usize) -> Self {
        NormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            epsilon: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `gamma / sqrt(var + eps)` for channel `c`.
    #[inline]
    pub fn scale(&self, c: usize) -> f64 {
        let sigma = (self.var[c] as f64 + self.epsilon as f64).sqrt();
        self.gamma[c] as f64 / sigma
    }

    /// `beta - scale * mean` for channel `c`.
    #[inline]
    pub fn offset(&self, c: usize) -> f64 {
        self.beta[c] as f64 - self.scale(c) * self.mean[c] as f64
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.mean.len() != n || self.var.len() != n {
            return Err("norm parameter vectors differ in length".into());
        }
        for c in 0..n {
            let v = self.var[c] as f64 + self.epsilon as f64;
            if v.is_nan() || v <= 0.0 {
                return Err(format!("channel {c}: var + epsilon = {v} is not positive"));
            }
            let vals = [self.gamma[c], self.beta[c], self.mean[c], self.var[c]];
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(format!("channel {c}: non-finite norm parameter"));
            }
        }
        Ok(())
    }
}

/// One weight layer with its optional attached normalizations.
///
/// Forward order: `input_norm` on inputs, linear map with per-output
/// `weight_norm` scale, bias, `norm` on outputs, then the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out, in]` for dense, `[out, in, kh, kw]` for conv2d, row-major.
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub activation: Activation,
    pub norm: Option<NormParams>,
    pub input_norm: Option<NormParams>,
    pub weight_norm: Option<Vec<f32>>,
}

impl LayerSpec {
    pub fn dense(n_in: usize, n_out: usize, weights: Vec<f32>, bias: Option<Vec<f32>>, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_channels: n_in,
            out_channels: n_out,
            weights,
            bias,
            activation,
            norm: None,
            input_norm: None,
            weight_norm: None,
        }
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d(geometry),
            in_channels,
            out_channels,
            weights,
            bias,
            activation,
            norm: None,
            input_norm: None,
            weight_norm: None,
        }
    }

    /// Expected weight tensor shape.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.out_channels, self.in_channels],
            LayerKind::Conv2d(g) => vec![self.out_channels, self.in_channels, g.kernel_h, g.kernel_w],
        }
    }

    /// Weights feeding one output channel.
    pub fn kernel_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_channels,
            LayerKind::Conv2d(g) => self.in_channels * g.kernel_h * g.kernel_w,
        }
    }

    pub fn has_norms(&self) -> bool {
        self.norm.is_some() || self.input_norm.is_some() || self.weight_norm.is_some()
    }

    /// Weights and biases in this layer.
    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// `[channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_dims(dims: &[usize]) -> Option<Shape3> {
        match *dims {
            [n] => Some(Shape3 { c: n, h: 1, w: 1 }),
            [c, h, w] => Some(Shape3 { c, h, w }),
            _ => None,
        }
    }
}

/// Resolved connectivity of one layer; shared by every engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub kind: LayerKind,
    pub input: Shape3,
    pub output: Shape3,
}

impl LayerDims {
    pub fn n_in(&self) -> usize {
        self.input.len()
    }

    pub fn n_out(&self) -> usize {
        self.output.len()
    }

    pub fn n_weights(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.n_out() * self.n_in(),
            LayerKind::Conv2d(g) => self.output.c * self.input.c * g.kernel_h * g.kernel_w,
        }
    }

    /// Output channel that owns output unit `u` (selects bias and norm entries).
    #[inline]
    pub fn channel_of_output(&self, u: usize) -> usize {
        u / (self.output.h * self.output.w)
    }

    /// Channel of input element `i` for per-input-channel normalization.
    #[inline]
    pub fn channel_of_input(&self, i: usize) -> usize {
        match self.kind {
            LayerKind::Dense => i,
            LayerKind::Conv2d(_) => i / (self.input.h * self.input.w),
        }
    }

    /// Number of channels an input normalization must cover.
    pub fn input_norm_channels(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.n_in(),
            LayerKind::Conv2d(_) => self.input.c,
        }
    }

    /// Visit every `(weight index, input index)` pair feeding output unit `u`.
    /// Padded (out-of-bounds) taps are skipped.
    pub fn for_each_connection(&self, u: usize, mut f: impl FnMut(usize, usize)) {
        match self.kind {
            LayerKind::Dense => {
                let n_in = self.n_in();
                let base = u * n_in;
                for i in 0..n_in {
                    f(base + i, i);
                }
            }
            LayerKind::Conv2d(g) => {
                let plane = self.output.h * self.output.w;
                let oc = u / plane;
                let oy = (u % plane) / self.output.w;
                let ox = u % self.output.w;
                let Shape3 { c: ic_n, h: ih, w: iw } = self.input;
                for ic in 0..ic_n {
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let widx = ((oc * ic_n + ic) * g.kernel_h + ky) * g.kernel_w + kx;
                            let iidx = (ic * ih + iy as usize) * iw + ix as usize;
                            f(widx, iidx);
                        }
                    }
                }
            }
        }
    }

    /// Offset of a weight inside its output channel's kernel.
    #[inline]
    pub fn kernel_position(&self, widx: usize) -> usize {
        match self.kind {
            LayerKind::Dense => widx % self.n_in(),
            LayerKind::Conv2d(g) => widx % (self.input.c * g.kernel_h * g.kernel_w),
        }
    }
}

/// Compute the output shape of `layer` applied to `input`.
pub fn layer_output_shape(index: usize, layer: &LayerSpec, input: Shape3) -> Result<Shape3> {
    match layer.kind {
        LayerKind::Dense => {
            if layer.in_channels != input.len() {
                return Err(Error::Shape {
                    layer: index,
                    msg: format!("dense layer expects {} inputs, previous output has {}", layer.in_channels, input.len()),
                });
            }
            Ok(Shape3 {
                c: layer.out_channels,
                h: 1,
                w: 1,
            })
        }
        LayerKind::Conv2d(g) => {
            if layer.in_channels != input.c {
                return Err(Error::Shape {
                    layer: index,
                    msg: format!("conv2d expects {} input channels, got {}", layer.in_channels, input.c),
                });
            }
            if g.stride == 0 || g.kernel_h == 0 || g.kernel_w == 0 {
                return Err(Error::Shape {
                    layer: index,
                    msg: "conv2d kernel and stride must be positive".into(),
                });
            }
            let ph = input.h + 2 * g.padding;
            let pw = input.w + 2 * g.padding;
            if ph < g.kernel_h || pw < g.kernel_w {
                return Err(Error::Shape {
                    layer: index,
                    msg: format!("kernel {}x{} larger than padded input {}x{}", g.kernel_h, g.kernel_w, ph, pw),
                });
            }
            Ok(Shape3 {
                c: layer.out_channels,
                h: (ph - g.kernel_h) / g.stride + 1,
                w: (pw - g.kernel_w) / g.stride + 1,
            })
        }
    }
}

/// A feed-forward chain of weight layers. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    dims: Vec<LayerDims>,
}

impl FloatModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shape = Shape3::from_dims(&input_shape)
            .ok_or_else(|| Error::InvalidParam(format!("input shape {input_shape:?} must be [n] or [c, h, w]")))?;
        let mut dims = Vec::with_capacity(layers.len());
        let last = layers.len().saturating_sub(1);
        for (i, layer) in layers.iter().enumerate() {
            validate_layer(i, layer)?;
            if layer.activation == Activation::None && i != last {
                return Err(Error::Shape {
                    layer: i,
                    msg: "activation 'none' is only allowed on the final layer".into(),
                });
            }
            let out = layer_output_shape(i, layer, shape)?;
            let d = LayerDims {
                kind: layer.kind,
                input: shape,
                output: out,
            };
            if let Some(n) = &layer.input_norm {
                if n.channels() != d.input_norm_channels() {
                    return Err(Error::Shape {
                        layer: i,
                        msg: format!("input norm has {} channels, layer needs {}", n.channels(), d.input_norm_channels()),
                    });
                }
            }
            dims.push(d);
            shape = out;
        }
        Ok(FloatModel {
            input_shape,
            layers,
            dims,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.dims.last().map_or(self.input_len(), |d| d.n_out())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn dims(&self) -> &[LayerDims] {
        &self.dims
    }

    pub fn into_layers(self) -> Vec<LayerSpec> {
        self.layers
    }

    /// Total weights and biases (`N_net`).
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn has_norms(&self) -> bool {
        self.layers.iter().any(LayerSpec::has_norms)
    }

    /// Continuous forward pass, returning pre-softmax outputs.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::Shape {
                layer: 0,
                msg: format!("input has {} values, model expects {}", input.len(), self.input_len()),
            });
        }
        let mut x = input.to_vec();
        for (layer, dims) in self.layers.iter().zip(&self.dims) {
            x = layer_forward(layer, dims, &x);
        }
        Ok(x)
    }
}

/// Convenience wrapper matching the pipeline naming.
pub fn forward_float(model: &FloatModel, input: &[f64]) -> Result<Vec<f64>> {
    model.forward(input)
}

fn validate_layer(i: usize, layer: &LayerSpec) -> Result<()> {
    let shape_err = |msg: String| Error::Shape { layer: i, msg };
    let expected: usize = layer.weight_shape().iter().product();
    if layer.weights.len() != expected {
        return Err(shape_err(format!(
            "weight tensor has {} values, shape {:?} needs {}",
            layer.weights.len(),
            layer.weight_shape(),
            expected
        )));
    }
    if layer.weights.iter().any(|w| !w.is_finite()) {
        return Err(shape_err("non-finite weight".into()));
    }
    if let Some(b) = &layer.bias {
        if b.len() != layer.out_channels {
            return Err(shape_err(format!("bias has {} values, expected {}", b.len(), layer.out_channels)));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("non-finite bias".into()));
        }
    }
    if let Some(n) = &layer.norm {
        n.validate().map_err(|m| shape_err(format!("norm: {m}")))?;
        if n.channels() != layer.out_channels {
            return Err(shape_err(format!("norm has {} channels, expected {}", n.channels(), layer.out_channels)));
        }
    }
    if let Some(n) = &layer.input_norm {
        n.validate().map_err(|m| shape_err(format!("input norm: {m}")))?;
    }
    if let Some(s) = &layer.weight_norm {
        if s.len() != layer.out_channels {
            return Err(shape_err(format!("weight norm has {} scales, expected {}", s.len(), layer.out_channels)));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("non-finite weight-norm scale".into()));
        }
    }
    Ok(())
}

/// Linear map plus bias; no normalization or activation.
pub(crate) fn linear_forward<W: Copy + Into<f64>, B: Copy + Into<f64>>(
    dims: &LayerDims,
    weights: &[W],
    bias: Option<&[B]>,
    input: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; dims.n_out()];
    for (u, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        dims.for_each_connection(u, |wi, ii| acc += weights[wi].into() * input[ii]);
        if let Some(b) = bias {
            acc += b[dims.channel_of_output(u)].into();
        }
        *o = acc;
    }
    out
}

fn layer_forward(layer: &LayerSpec, dims: &LayerDims, input: &[f64]) -> Vec<f64> {
    let normed;
    let x = match &layer.input_norm {
        Some(n) => {
            normed = input
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = dims.channel_of_input(i);
                    n.scale(c) * v + n.offset(c)
                })
                .collect::<Vec<_>>();
            &normed[..]
        }
        None => input,
    };
    let mut y = vec![0.0; dims.n_out()];
    for (u, o) in y.iter_mut().enumerate() {
        let oc = dims.channel_of_output(u);
        let mut acc = 0.0;
        dims.for_each_connection(u, |wi, ii| acc += layer.weights[wi] as f64 * x[ii]);
        if let Some(s) = &layer.weight_norm {
            acc *= s[oc] as f64;
        }
        if let Some(b) = &layer.bias {
            acc += b[oc] as f64;
        }
        if let Some(n) = &layer.norm {
            acc = n.scale(oc) * acc + n.offset(oc);
        }
        *o = layer.activation.apply(acc);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense1(w: Vec<f32>, b: Vec<f32>, n_in: usize, act: Activation) -> FloatModel {
        let n_out = b.len();
        FloatModel::new(vec![n_in], vec![LayerSpec::dense(n_in, n_out, w, Some(b), act)]).unwrap()
    }

    #[test]
    fn identity_weight_passes_value() {
        let m = dense1(vec![1.0], vec![0.0], 1, Activation::Relu6);
        assert_eq!(m.forward(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn relu6_clamps() {
        let m = dense1(vec![1.0], vec![0.0], 1, Activation::Relu6);
        assert_eq!(m.forward(&[9.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn hand_evaluated_dense() {
        let m = dense1(vec![2.0, -1.0], vec![0.5], 2, Activation::None);
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn tanh_stays_open_interval() {
        let m = dense1(vec![1.0], vec![0.0], 1, Activation::Tanh);
        let y = m.forward(&[3.0]).unwrap()[0];
        assert!(y > -1.0 && y < 1.0);
    }

    #[test]
    fn empty_model_is_identity() {
        let m = FloatModel::new(vec![2, 1, 2], vec![]).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.output_len(), 4);
    }

    #[test]
    fn wrong_input_length_names_layer() {
        let m = dense1(vec![1.0, 1.0], vec![0.0], 2, Activation::None);
        let err = m.forward(&[1.0]).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn incompatible_chain_is_rejected() {
        let l0 = LayerSpec::dense(2, 3, vec![0.0; 6], None, Activation::Relu6);
        let l1 = LayerSpec::dense(4, 1, vec![0.0; 4], None, Activation::None);
        let err = FloatModel::new(vec![2], vec![l0, l1]).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn none_activation_only_last() {
        let l0 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::None);
        let l1 = LayerSpec::dense(1, 1, vec![1.0], None, Activation::None);
        assert!(FloatModel::new(vec![1], vec![l0, l1]).is_err());
    }

    #[test]
    fn non_finite_weight_rejected() {
        let l0 = LayerSpec::dense(1, 1, vec![f32::NAN], None, Activation::None);
        assert!(FloatModel::new(vec![1], vec![l0]).is_err());
    }

    #[test]
    fn pointwise_conv_matches_dense() {
        // 3 input channels on a 1x1 plane, 2 outputs.
        let w = vec![0.5f32, -1.25, 2.0, 0.75, 0.1, -0.3];
        let b = vec![0.2f32, -0.4];
        let dense = FloatModel::new(vec![3], vec![LayerSpec::dense(3, 2, w.clone(), Some(b.clone()), Activation::None)]).unwrap();
        let conv = FloatModel::new(
            vec![3, 1, 1],
            vec![LayerSpec::conv2d(3, 2, ConvGeometry::pointwise(), w, Some(b), Activation::None)],
        )
        .unwrap();
        let x = [0.3, -1.7, 2.2];
        let a = dense.forward(&x).unwrap();
        let c = conv.forward(&x).unwrap();
        for (p, q) in a.iter().zip(&c) {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
        }
    }

    #[test]
    fn conv_with_padding_and_stride() {
        // 1 channel 3x3 input, 2x2 kernel of ones, stride 2, padding 1 -> 2x2 output.
        let l = LayerSpec::conv2d(
            1,
            1,
            ConvGeometry {
                kernel_h: 2,
                kernel_w: 2,
                stride: 2,
                padding: 1,
            },
            vec![1.0; 4],
            None,
            Activation::None,
        );
        let m = FloatModel::new(vec![1, 3, 3], vec![l]).unwrap();
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        // windows over padded 5x5: rows {-1,0},{1,2}; cols {-1,0},{1,2}
        assert_eq!(m.forward(&x).unwrap(), vec![1.0, 2.0 + 3.0, 4.0 + 7.0, 5.0 + 6.0 + 8.0 + 9.0]);
    }
}

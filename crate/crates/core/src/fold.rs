//! Folding batch-norm and weight-norm into adjacent weight layers.
//!
//! All arithmetic runs in f64 and is rounded to f32 once per parameter.

use crate::model::{FloatModel, LayerDims, LayerKind, LayerSpec, NormParams, Shape3};
use crate::{Error, Result};

/// Fold the layer's output norm (`layer.norm`) into its weights and bias:
/// `w <- (g/s) w`, `b <- (g/s) b + beta - (g/s) m`.
pub fn fold_bn_after(layer: &LayerSpec) -> Result<LayerSpec> {
    let norm = layer
        .norm
        .as_ref()
        .ok_or_else(|| Error::Fold("layer has no norm to fold".into()))?;
    norm.validate().map_err(Error::Fold)?;
    if norm.channels() != layer.out_channels {
        return Err(Error::Fold(format!(
            "norm has {} channels, layer has {} outputs",
            norm.channels(),
            layer.out_channels
        )));
    }
    let mut out = layer.clone();
    let k = layer.kernel_len();
    let bias = layer.bias.clone().unwrap_or_else(|| vec![0.0; layer.out_channels]);
    let mut new_bias = Vec::with_capacity(layer.out_channels);
    for (c, &b) in bias.iter().enumerate() {
        let g = norm.scale(c);
        for w in &mut out.weights[c * k..(c + 1) * k] {
            *w = (g * *w as f64) as f32;
        }
        new_bias.push((g * b as f64 + norm.offset(c)) as f32);
    }
    out.bias = Some(new_bias);
    out.norm = None;
    Ok(out)
}

/// Fold a normalization that precedes `layer` (one entry per input channel):
/// first `b <- b + sum_i (beta_i - (g_i/s_i) m_i) w_i`, then `w_i <- (g_i/s_i) w_i`.
pub fn fold_bn_before(layer: &LayerSpec, norms: &NormParams) -> Result<LayerSpec> {
    norms.validate().map_err(Error::Fold)?;
    let (per_channel, plane) = match layer.kind {
        LayerKind::Dense => (layer.in_channels, 1),
        LayerKind::Conv2d(g) => {
            if g.padding != 0 {
                return Err(Error::Fold(
                    "cannot fold a preceding norm into a zero-padded conv2d (padded taps see the raw zero)".into(),
                ));
            }
            (layer.in_channels, g.kernel_h * g.kernel_w)
        }
    };
    if norms.channels() != per_channel {
        return Err(Error::Fold(format!(
            "preceding norm has {} channels, layer consumes {}",
            norms.channels(),
            per_channel
        )));
    }
    let mut out = layer.clone();
    let k = layer.kernel_len();
    let row_scale = |c: usize| layer.weight_norm.as_ref().map_or(1.0, |s| s[c] as f64);
    let mut bias: Vec<f64> = layer
        .bias
        .as_ref()
        .map_or_else(|| vec![0.0; layer.out_channels], |b| b.iter().map(|&v| v as f64).collect());
    // Bias first, using the original weights.
    for (c, b) in bias.iter_mut().enumerate() {
        let rs = row_scale(c);
        let row = &layer.weights[c * k..(c + 1) * k];
        let mut acc = 0.0;
        for (p, &w) in row.iter().enumerate() {
            acc += norms.offset(p / plane) * rs * w as f64;
        }
        *b += acc;
    }
    for c in 0..layer.out_channels {
        for (p, w) in out.weights[c * k..(c + 1) * k].iter_mut().enumerate() {
            *w = (norms.scale(p / plane) * *w as f64) as f32;
        }
    }
    out.bias = Some(bias.into_iter().map(|v| v as f32).collect());
    Ok(out)
}

/// Multiply each output channel's weights by its weight-norm scale and drop
/// the scale. Layers without weight norm are returned unchanged.
pub fn fold_weight_norm(layer: &LayerSpec) -> Result<LayerSpec> {
    let Some(scale) = &layer.weight_norm else {
        return Ok(layer.clone());
    };
    apply_weight_scale(layer, scale)
}

/// Same as [`fold_weight_norm`] with an explicit scale: one entry (broadcast)
/// or one per output channel.
pub fn apply_weight_scale(layer: &LayerSpec, scale: &[f32]) -> Result<LayerSpec> {
    if scale.len() != 1 && scale.len() != layer.out_channels {
        return Err(Error::Fold(format!(
            "weight-norm scale has {} entries, expected 1 or {}",
            scale.len(),
            layer.out_channels
        )));
    }
    let mut out = layer.clone();
    let k = layer.kernel_len();
    for c in 0..layer.out_channels {
        let s = if scale.len() == 1 { scale[0] } else { scale[c] } as f64;
        for w in &mut out.weights[c * k..(c + 1) * k] {
            *w = (s * *w as f64) as f32;
        }
    }
    out.weight_norm = None;
    Ok(out)
}

/// Fold every normalization attached to every layer. Idempotent.
pub fn fold_model(model: &FloatModel) -> Result<FloatModel> {
    let mut layers = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let ctx = |e: Error| Error::Fold(format!("layer {i}: {e}"));
        let mut l = fold_weight_norm(layer).map_err(ctx)?;
        if let Some(n) = l.input_norm.take() {
            l = fold_bn_before(&l, &n).map_err(ctx)?;
        }
        if l.norm.is_some() {
            l = fold_bn_after(&l).map_err(ctx)?;
        }
        layers.push(l);
    }
    FloatModel::new(model.input_shape().to_vec(), layers)
}

/// A norm feeding several weight layers (skip connection or tower split):
/// fold it into every direct consumer.
pub fn fold_into_consumers(norm: &NormParams, consumers: &[LayerSpec]) -> Result<Vec<LayerSpec>> {
    consumers.iter().map(|l| fold_bn_before(l, norm)).collect()
}

/// Apply a standalone normalization to a `[c, h, w]` activation block.
pub fn apply_norm(norm: &NormParams, shape: Shape3, x: &[f64]) -> Vec<f64> {
    let plane = shape.h * shape.w;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            norm.scale(c) * v + norm.offset(c)
        })
        .collect()
}

/// Layer dims helper for callers building ad-hoc graphs around [`fold_into_consumers`].
pub fn standalone_dims(layer: &LayerSpec, input: Shape3) -> Result<LayerDims> {
    let out = crate::model::layer_output_shape(0, layer, input)?;
    Ok(LayerDims {
        kind: layer.kind,
        input,
        output: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn norm1(gamma: f32, beta: f32, mean: f32, var: f32) -> NormParams {
        NormParams {
            gamma: vec![gamma],
            beta: vec![beta],
            mean: vec![mean],
            var: vec![var],
            epsilon: 0.0,
        }
    }

    fn unit(w: f32, b: Option<f32>) -> LayerSpec {
        LayerSpec::dense(1, 1, vec![w], b.map(|v| vec![v]), Activation::None)
    }

    #[test]
    fn identity_norm_after_is_noop() {
        // gamma == sigma, beta == m
        let mut l = unit(1.5, Some(0.25));
        l.norm = Some(norm1(2.0, 0.7, 0.7, 4.0));
        let f = fold_bn_after(&l).unwrap();
        assert_eq!(f.weights, vec![1.5]);
        assert_eq!(f.bias, Some(vec![0.25]));
        assert!(f.norm.is_none());
    }

    #[test]
    fn hand_evaluated_fold_after() {
        let mut l = unit(2.0, Some(1.0));
        l.norm = Some(norm1(2.0, 0.5, 3.0, 1.0));
        let f = fold_bn_after(&l).unwrap();
        assert_eq!(f.weights, vec![4.0]);
        assert_eq!(f.bias, Some(vec![-3.5]));
    }

    #[test]
    fn zero_gamma_leaves_beta() {
        let mut l = unit(2.0, Some(1.0));
        l.norm = Some(norm1(0.0, 0.5, 3.0, 1.0));
        let f = fold_bn_after(&l).unwrap();
        assert_eq!(f.weights, vec![0.0]);
        assert_eq!(f.bias, Some(vec![0.5]));
    }

    #[test]
    fn missing_bias_is_created() {
        let mut l = unit(2.0, None);
        l.norm = Some(norm1(1.0, 0.5, 0.0, 1.0));
        assert_eq!(fold_bn_after(&l).unwrap().bias, Some(vec![0.5]));
    }

    #[test]
    fn non_positive_variance_rejected() {
        let mut l = unit(2.0, None);
        l.norm = Some(NormParams {
            epsilon: 0.0,
            ..norm1(1.0, 0.0, 0.0, 0.0)
        });
        assert!(fold_bn_after(&l).is_err());
    }

    #[test]
    fn fold_before_identity() {
        let l = unit(3.0, Some(1.0));
        let f = fold_bn_before(&l, &norm1(2.0, 0.0, 0.0, 4.0)).unwrap();
        assert_eq!(f.weights, vec![3.0]);
        assert_eq!(f.bias, Some(vec![1.0]));
    }

    #[test]
    fn fold_before_hand_evaluated() {
        let l = unit(3.0, Some(1.0));
        let f = fold_bn_before(&l, &norm1(1.0, 2.0, 1.0, 1.0)).unwrap();
        assert_eq!(f.bias, Some(vec![4.0]));
        assert_eq!(f.weights, vec![3.0]);
    }

    #[test]
    fn fold_before_order_with_scale_two() {
        let l = unit(3.0, Some(1.0));
        // gamma/sigma = 2, beta = 2, m = 1: offset 2 - 2*1 = 0.
        let f = fold_bn_before(&l, &norm1(2.0, 2.0, 1.0, 1.0)).unwrap();
        assert_eq!(f.bias, Some(vec![1.0]));
        assert_eq!(f.weights, vec![6.0]);
        // Offset non-zero: bias must use the pre-scale weight (3), not 6.
        let f = fold_bn_before(&l, &norm1(2.0, 3.0, 1.0, 1.0)).unwrap();
        assert_eq!(f.bias, Some(vec![1.0 + (3.0 - 2.0) * 3.0]));
    }

    #[test]
    fn fold_before_channel_mismatch() {
        let l = LayerSpec::dense(2, 1, vec![1.0, 1.0], None, Activation::None);
        assert!(fold_bn_before(&l, &norm1(1.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn weight_norm_scaling() {
        let mut l = unit(4.0, Some(1.0));
        l.weight_norm = Some(vec![1.0]);
        assert_eq!(fold_weight_norm(&l).unwrap().weights, vec![4.0]);
        l.weight_norm = Some(vec![0.5]);
        let f = fold_weight_norm(&l).unwrap();
        assert_eq!(f.weights, vec![2.0]);
        assert_eq!(f.bias, Some(vec![1.0]));
        assert!(f.weight_norm.is_none());
    }

    #[test]
    fn weight_norm_per_channel() {
        let mut l = LayerSpec::dense(1, 2, vec![1.0, 1.0], None, Activation::None);
        l.weight_norm = Some(vec![1.0, 2.0]);
        assert_eq!(fold_weight_norm(&l).unwrap().weights, vec![1.0, 2.0]);
    }

    #[test]
    fn fold_model_is_idempotent() {
        let mut l = LayerSpec::dense(2, 2, vec![1.0, -2.0, 0.5, 0.25], Some(vec![0.1, 0.2]), Activation::Relu6);
        l.norm = Some(NormParams {
            gamma: vec![1.5, 0.5],
            beta: vec![0.1, -0.1],
            mean: vec![0.2, 0.3],
            var: vec![2.0, 0.5],
            epsilon: 1e-3,
        });
        let m = FloatModel::new(vec![2], vec![l]).unwrap();
        let once = fold_model(&m).unwrap();
        let twice = fold_model(&once).unwrap();
        assert_eq!(once, twice);
        assert!(!once.has_norms());
    }
}

//! Forward and reverse passes of the evaluator network.
//!
//! A backbone maps a [`ModelInput`] to a feature vector; one linear head per
//! regression target follows, each squashed by the logistic function. All
//! parameters live in one flat `f64` slice whose layout the backbone defines.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ModelInput;

/// A named, contiguous run of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlice {
    pub name: String,
    pub range: Range<usize>,
    /// Number of inputs feeding each output unit; zero marks a bias.
    pub fan_in: usize,
}

impl ParamSlice {
    pub fn is_bias(&self) -> bool {
        self.fan_in == 0
    }
}

/// Feature extractor in front of the regression heads.
pub trait Backbone: Send + Sync {
    /// Whatever the reverse pass needs from the forward pass.
    type Trace: Send;

    fn param_slices(&self) -> Vec<ParamSlice>;
    fn param_count(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn input_side(&self) -> usize;

    fn forward(&self, params: &[f64], input: &ModelInput) -> (Vec<f64>, Self::Trace);

    /// Accumulates `d loss / d params` into `grad` given `d loss / d features`.
    fn backward(&self, params: &[f64], trace: &Self::Trace, d_features: &[f64], grad: &mut [f64]);
}

/// Serializable description of a backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSpec {
    /// Blocks of 3×3 convolution, ReLU and 2×2 average pooling, then global average pooling.
    Conv { widths: Vec<usize> },
}

/// Everything needed to rebuild the network: backbone, head count, input side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub backbone: BackboneSpec,
    pub heads: usize,
    pub input_side: usize,
}

impl Architecture {
    /// Four conv blocks of widths 8/16/32/64.
    pub fn small_cnn(heads: usize, input_side: usize) -> Self {
        Self {
            backbone: BackboneSpec::Conv {
                widths: vec![8, 16, 32, 64],
            },
            heads,
            input_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.heads) {
            return Err(Error::invalid(format!("head count must be 1 or 2, got {}", self.heads)));
        }
        match &self.backbone {
            BackboneSpec::Conv { widths } => {
                if widths.is_empty() || widths.contains(&0) {
                    return Err(Error::invalid("conv widths must be a nonempty list of positive sizes"));
                }
                if widths.len() >= usize::BITS as usize || self.input_side >> widths.len() == 0 {
                    return Err(Error::invalid(format!(
                        "input side {} is too small for {} pooling blocks",
                        self.input_side,
                        widths.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn conv(&self) -> ConvBackbone {
        match &self.backbone {
            BackboneSpec::Conv { widths } => ConvBackbone::new(widths.clone(), self.input_side),
        }
    }

    /// Total parameter count: backbone plus `heads × (features + 1)`.
    pub fn param_count(&self) -> usize {
        let b = self.conv();
        b.param_count() + self.heads * (b.feature_dim() + 1)
    }

    /// Backbone slices followed by head weights and biases.
    pub fn param_slices(&self) -> Vec<ParamSlice> {
        let b = self.conv();
        let mut slices = b.param_slices();
        let mut at = b.param_count();
        let f = b.feature_dim();
        slices.push(ParamSlice {
            name: "head.weight".into(),
            range: at..at + self.heads * f,
            fan_in: f,
        });
        at += self.heads * f;
        slices.push(ParamSlice {
            name: "head.bias".into(),
            range: at..at + self.heads,
            fan_in: 0,
        });
        slices
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    side: usize,
    weight: usize,
    bias: usize,
}

/// Convolutional backbone; see [`BackboneSpec::Conv`].
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    layers: Vec<ConvLayer>,
    input_side: usize,
    param_count: usize,
}

/// Per-block activations kept for the reverse pass.
pub struct ConvTrace {
    /// Input to each block (the first one is the model input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation convolution output of each block.
    pre: Vec<Vec<f64>>,
}

impl ConvBackbone {
    pub fn new(widths: Vec<usize>, input_side: usize) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let (mut cin, mut side, mut at) = (3, input_side, 0);
        for &cout in &widths {
            let weight = at;
            let bias = weight + cout * cin * 9;
            at = bias + cout;
            layers.push(ConvLayer {
                cin,
                cout,
                side,
                weight,
                bias,
            });
            cin = cout;
            side /= 2;
        }
        Self {
            layers,
            input_side,
            param_count: at,
        }
    }

    fn output_side(&self) -> usize {
        self.layers.last().map_or(self.input_side, |l| l.side / 2)
    }
}

/// Valid output range along one axis for a kernel offset `d ∈ {-1, 0, 1}`.
#[inline]
fn span(side: usize, d: isize) -> Range<usize> {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { side - 1 } else { side };
    lo..hi
}

fn conv_forward(layer: &ConvLayer, params: &[f64], input: &[f64], out: &mut [f64]) {
    let s = layer.side;
    let n = s * s;
    let w = &params[layer.weight..layer.bias];
    for co in 0..layer.cout {
        let o = &mut out[co * n..(co + 1) * n];
        o.fill(params[layer.bias + co]);
        for ci in 0..layer.cin {
            let inp = &input[ci * n..(ci + 1) * n];
            for k in 0..9 {
                let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
                let wk = w[(co * layer.cin + ci) * 9 + k];
                let xs = span(s, dx);
                for y in span(s, dy) {
                    let iy = (y as isize + dy) as usize;
                    let orow = &mut o[y * s + xs.start..y * s + xs.end];
                    let ix0 = (xs.start as isize + dx) as usize;
                    let irow = &inp[iy * s + ix0..iy * s + ix0 + orow.len()];
                    for (a, &b) in orow.iter_mut().zip(irow) {
                        *a += wk * b;
                    }
                }
            }
        }
    }
}

/// Reverse pass of one convolution: accumulates weight and bias gradients and,
/// when requested, writes the input gradient.
fn conv_backward(
    layer: &ConvLayer,
    params: &[f64],
    input: &[f64],
    d_out: &[f64],
    grad: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let s = layer.side;
    let n = s * s;
    for co in 0..layer.cout {
        let g = &d_out[co * n..(co + 1) * n];
        grad[layer.bias + co] += g.iter().sum::<f64>();
        for ci in 0..layer.cin {
            let inp = &input[ci * n..(ci + 1) * n];
            for k in 0..9 {
                let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
                let xs = span(s, dx);
                let ix0 = (xs.start as isize + dx) as usize;
                let mut acc = 0.0;
                for y in span(s, dy) {
                    let iy = (y as isize + dy) as usize;
                    let grow = &g[y * s + xs.start..y * s + xs.end];
                    let irow = &inp[iy * s + ix0..iy * s + ix0 + grow.len()];
                    acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                }
                grad[layer.weight + (co * layer.cin + ci) * 9 + k] += acc;
            }
        }
    }
    let Some(d_in) = d_input else { return };
    d_in.fill(0.0);
    let w = &params[layer.weight..layer.bias];
    for ci in 0..layer.cin {
        let di = &mut d_in[ci * n..(ci + 1) * n];
        for co in 0..layer.cout {
            let g = &d_out[co * n..(co + 1) * n];
            for k in 0..9 {
                let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
                let wk = w[(co * layer.cin + ci) * 9 + k];
                let xs = span(s, dx);
                let ix0 = (xs.start as isize + dx) as usize;
                for y in span(s, dy) {
                    let iy = (y as isize + dy) as usize;
                    let grow = &g[y * s + xs.start..y * s + xs.end];
                    let drow = &mut di[iy * s + ix0..iy * s + ix0 + grow.len()];
                    for (d, &gv) in drow.iter_mut().zip(grow) {
                        *d += wk * gv;
                    }
                }
            }
        }
    }
}

fn relu_pool(pre: &[f64], channels: usize, side: usize) -> Vec<f64> {
    let half = side / 2;
    let mut out = vec![0.0; channels * half * half];
    for c in 0..channels {
        let plane = &pre[c * side * side..(c + 1) * side * side];
        for y in 0..half {
            let r0 = &plane[2 * y * side..(2 * y + 1) * side];
            let r1 = &plane[(2 * y + 1) * side..(2 * y + 2) * side];
            for x in 0..half {
                let sum = r0[2 * x].max(0.0) + r0[2 * x + 1].max(0.0) + r1[2 * x].max(0.0) + r1[2 * x + 1].max(0.0);
                out[(c * half + y) * half + x] = 0.25 * sum;
            }
        }
    }
    out
}

/// Reverse of `relu_pool`: spreads pooled gradients over their 2×2 windows, gated by ReLU.
fn relu_pool_backward(pre: &[f64], d_pooled: &[f64], channels: usize, side: usize) -> Vec<f64> {
    let half = side / 2;
    let mut d_pre = vec![0.0; channels * side * side];
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let g = 0.25 * d_pooled[(c * half + y) * half + x];
                for (yy, xx) in [
                    (2 * y, 2 * x),
                    (2 * y, 2 * x + 1),
                    (2 * y + 1, 2 * x),
                    (2 * y + 1, 2 * x + 1),
                ] {
                    let i = base + yy * side + xx;
                    if pre[i] > 0.0 {
                        d_pre[i] = g;
                    }
                }
            }
        }
    }
    d_pre
}

impl Backbone for ConvBackbone {
    type Trace = ConvTrace;

    fn param_slices(&self) -> Vec<ParamSlice> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(ParamSlice {
                name: format!("conv{i}.weight"),
                range: l.weight..l.bias,
                fan_in: l.cin * 9,
            });
            out.push(ParamSlice {
                name: format!("conv{i}.bias"),
                range: l.bias..l.bias + l.cout,
                fan_in: 0,
            });
        }
        out
    }

    fn param_count(&self) -> usize {
        self.param_count
    }

    fn feature_dim(&self) -> usize {
        self.layers.last().map_or(3, |l| l.cout)
    }

    fn input_side(&self) -> usize {
        self.input_side
    }

    fn forward(&self, params: &[f64], input: &ModelInput) -> (Vec<f64>, ConvTrace) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = input.values().to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.cout * layer.side * layer.side];
            conv_forward(layer, params, &current, &mut z);
            let pooled = relu_pool(&z, layer.cout, layer.side);
            inputs.push(std::mem::replace(&mut current, pooled));
            pre.push(z);
        }
        let side = self.output_side();
        let area = (side * side) as f64;
        let features = current
            .chunks_exact(side * side)
            .map(|plane| plane.iter().sum::<f64>() / area)
            .collect();
        (features, ConvTrace { inputs, pre })
    }

    fn backward(&self, params: &[f64], trace: &ConvTrace, d_features: &[f64], grad: &mut [f64]) {
        let side = self.output_side();
        let area = (side * side) as f64;
        let mut d_pooled: Vec<f64> = d_features
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / area, side * side))
            .collect();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let d_pre = relu_pool_backward(&trace.pre[l], &d_pooled, layer.cout, layer.side);
            if l == 0 {
                conv_backward(layer, params, &trace.inputs[l], &d_pre, grad, None);
            } else {
                let mut d_in = vec![0.0; layer.cin * layer.side * layer.side];
                conv_backward(layer, params, &trace.inputs[l], &d_pre, grad, Some(&mut d_in));
                d_pooled = d_in;
            }
        }
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass through backbone and heads; returns the per-head outputs in `(0, 1)`.
pub fn forward_with<B: Backbone>(
    backbone: &B,
    heads: usize,
    params: &[f64],
    input: &ModelInput,
) -> (Vec<f64>, B::Trace, Vec<f64>) {
    let (features, trace) = backbone.forward(params, input);
    let f = features.len();
    let w = &params[backbone.param_count()..];
    let outputs = (0..heads)
        .map(|h| {
            let z = w[h * f..(h + 1) * f]
                .iter()
                .zip(&features)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + w[heads * f + h];
            logistic(z)
        })
        .collect();
    (outputs, trace, features)
}

/// Weighted squared error `Σ_h weight_h · (pred_h − target_h)²`.
pub fn weighted_loss(pred: &[f64], target: &[f64], weights: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| w * (p - t) * (p - t))
        .sum()
}

/// Loss of one sample and its gradient, accumulated into `grad` scaled by `scale`.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss_grad<B: Backbone>(
    backbone: &B,
    heads: usize,
    params: &[f64],
    input: &ModelInput,
    target: &[f64],
    head_weights: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let (out, trace, features) = forward_with(backbone, heads, params, input);
    let loss = weighted_loss(&out, target, head_weights);
    let f = features.len();
    let base = backbone.param_count();
    let mut d_features = vec![0.0; f];
    for h in 0..heads {
        let o = out[h];
        let dz = scale * 2.0 * head_weights[h] * (o - target[h]) * o * (1.0 - o);
        let wh = base + h * f;
        for k in 0..f {
            grad[wh + k] += dz * features[k];
            d_features[k] += dz * params[wh + k];
        }
        grad[base + heads * f + h] += dz;
    }
    backbone.backward(params, &trace, &d_features, grad);
    loss
}

//! Small dense/convolutional network with softmax cross-entropy training.
//!
//! Weights of every layer are stored as an `outputs × fan_in` matrix. For a
//! convolution `fan_in = in_channels·kh·kw` and row `o` is kernel `o`
//! flattened channel-major, then kernel row, then kernel column, so the
//! matrix is the `(out, in, kh, kw)` tensor in row-major order. Convolutions
//! are valid (no padding) with stride 1 and are lowered to matrix products by
//! im2col; feature maps are stored channel-major.
//!
//! The linear part of each layer goes through a [`LinearBackend`], which is
//! how the crossbar simulator replaces the digital product at inference time.

pub mod data;
pub mod io;
pub mod train;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub use data::{LabeledDataset, SplitTag};
pub use train::{clean_accuracy, evaluate_accuracy, train, EpochStats, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::None => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        in_h: usize,
        in_w: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
        }
    }

    /// Valid stride-1 convolution over an `in_channels × in_h × in_w` input.
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        (in_h, in_w): (usize, usize),
        (kernel_h, kernel_w): (usize, usize),
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv {
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
            },
            activation,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }

    /// Length of one input vector of the linear map (rows of the flattened matrix).
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
        }
    }

    /// Output neurons or feature maps (columns of the flattened matrix).
    pub fn neurons(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv { out_channels, .. } => out_channels,
        }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense { .. } => (1, 1),
            LayerKind::Conv {
                in_h,
                in_w,
                kernel_h,
                kernel_w,
                ..
            } => (in_h + 1 - kernel_h, in_w + 1 - kernel_w),
        }
    }

    /// Output cells per neuron: 1 for dense layers, the feature-map area for convolutions.
    pub fn positions(&self) -> usize {
        let (h, w) = self.out_hw();
        h * w
    }

    pub fn input_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv {
                in_channels, in_h, in_w, ..
            } => in_channels * in_h * in_w,
        }
    }

    pub fn output_len(&self) -> usize {
        self.neurons() * self.positions()
    }

    pub fn parameter_count(&self) -> usize {
        self.neurons() * (self.fan_in() + 1)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            LayerKind::Dense { inputs, outputs } => inputs > 0 && outputs > 0,
            LayerKind::Conv {
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
            } => {
                in_channels > 0
                    && out_channels > 0
                    && kernel_h > 0
                    && kernel_w > 0
                    && kernel_h <= in_h
                    && kernel_w <= in_w
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("degenerate layer {self:?}")))
        }
    }

    /// im2col: one row per output position, `fan_in` entries per row.
    pub fn patches(&self, input: &[f64]) -> Matrix {
        match self.kind {
            LayerKind::Dense { inputs, .. } => Matrix::from_vec(1, inputs, input.to_vec()).unwrap(),
            LayerKind::Conv {
                in_channels,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
                ..
            } => {
                let (oh, ow) = self.out_hw();
                let mut m = Matrix::zeros(oh * ow, self.fan_in());
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = m.row_mut(oy * ow + ox);
                        let mut k = 0;
                        for c in 0..in_channels {
                            for ky in 0..kernel_h {
                                let base = c * in_h * in_w + (oy + ky) * in_w + ox;
                                row[k..k + kernel_w].copy_from_slice(&input[base..base + kernel_w]);
                                k += kernel_w;
                            }
                        }
                    }
                }
                m
            }
        }
    }

    /// Adjoint of [`patches`](Self::patches): scatter-add patch gradients back onto the input.
    fn fold_patches(&self, dpatches: &Matrix) -> Vec<f64> {
        match self.kind {
            LayerKind::Dense { .. } => dpatches.row(0).to_vec(),
            LayerKind::Conv {
                in_channels,
                in_h,
                in_w,
                kernel_h,
                kernel_w,
                ..
            } => {
                let (oh, ow) = self.out_hw();
                let mut dx = vec![0.0; self.input_len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = dpatches.row(oy * ow + ox);
                        let mut k = 0;
                        for c in 0..in_channels {
                            for ky in 0..kernel_h {
                                let base = c * in_h * in_w + (oy + ky) * in_w + ox;
                                for kx in 0..kernel_w {
                                    dx[base + kx] += row[k + kx];
                                }
                                k += kernel_w;
                            }
                        }
                    }
                }
                dx
            }
        }
    }
}

/// Layer stack. The last layer's outputs are logits fed to softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let a = Self { layers };
        a.validate()?;
        Ok(a)
    }

    /// Two valid 3×3 convolutions and two dense layers for 8×8 single-channel images.
    pub fn desk_cnn(classes: usize) -> Self {
        Self::new(vec![
            LayerSpec::conv(1, 16, (8, 8), (3, 3), Activation::Relu),
            LayerSpec::conv(16, 32, (6, 6), (3, 3), Activation::Relu),
            LayerSpec::dense(32 * 4 * 4, 128, Activation::Relu),
            LayerSpec::dense(128, classes, Activation::None),
        ])
        .unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && self.layers[i - 1].output_len() != l.input_len() {
                return Err(Error::Contract(format!(
                    "layer {} produces {} values but layer {i} expects {}",
                    i - 1,
                    self.layers[i - 1].output_len(),
                    l.input_len()
                )));
            }
        }
        if self.layers.last().unwrap().activation != Activation::None {
            return Err(Error::Contract("last layer must emit raw logits (activation none)".into()));
        }
        if self.classes() < 2 {
            return Err(Error::Contract("classifier needs at least two classes".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().output_len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `neurons × fan_in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    /// He-normal weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let layers = arch
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut r = rng::stream(seed, "init", &[i as u64]);
                let normal = Normal::new(0.0, (2.0 / spec.fan_in() as f64).sqrt()).unwrap();
                LayerParams {
                    weights: Matrix::from_fn(spec.neurons(), spec.fan_in(), |_, _| normal.sample(&mut r)),
                    bias: vec![0.0; spec.neurons()],
                }
            })
            .collect();
        Self { arch, layers }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layers
            .iter()
            .map(|s| LayerParams {
                weights: Matrix::zeros(s.neurons(), s.fan_in()),
                bias: vec![0.0; s.neurons()],
            })
            .collect();
        Self { arch, layers }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.layers.len() != self.arch.layers.len() {
            return Err(Error::Contract(format!(
                "{} parameter sets for {} layers",
                self.layers.len(),
                self.arch.layers.len()
            )));
        }
        for (i, (spec, p)) in self.arch.layers.iter().zip(&self.layers).enumerate() {
            if p.weights.rows() != spec.neurons() || p.weights.cols() != spec.fan_in() || p.bias.len() != spec.neurons() {
                return Err(Error::Contract(format!("layer {i} parameter shapes do not match its spec")));
            }
            if !p.weights.as_slice().iter().chain(&p.bias).all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Computes the bias-free linear part of a layer for every im2col patch.
pub trait LinearBackend {
    /// `patches` is `positions × fan_in`; the result is `positions × neurons`.
    fn linear(&mut self, layer: usize, params: &LayerParams, patches: &Matrix) -> Result<Matrix>;
}

/// Exact floating-point product `patches · Wᵀ`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Digital;

impl LinearBackend for Digital {
    fn linear(&mut self, _layer: usize, params: &LayerParams, patches: &Matrix) -> Result<Matrix> {
        let w = &params.weights;
        let mut out = Matrix::zeros(patches.rows(), w.rows());
        for p in 0..patches.rows() {
            let x = patches.row(p);
            let row = out.row_mut(p);
            for (o, slot) in row.iter_mut().enumerate() {
                *slot = w.row(o).iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }
}

/// Everything the backward pass and the sensitivity analysis need from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// im2col patches of each layer's input.
    pub patches: Vec<Matrix>,
    /// Pre-activations per layer, channel-major.
    pub pre: Vec<Vec<f64>>,
    /// Post-activations per layer; the last entry holds the logits.
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn scores(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

pub fn forward(params: &NetworkParams, input: &[f64]) -> Result<ForwardTrace> {
    forward_with(params, input, &mut Digital)
}

pub fn forward_with<B: LinearBackend + ?Sized>(params: &NetworkParams, input: &[f64], backend: &mut B) -> Result<ForwardTrace> {
    let arch = &params.arch;
    if input.len() != arch.input_len() {
        return Err(Error::Contract(format!(
            "input has {} values, network expects {}",
            input.len(),
            arch.input_len()
        )));
    }
    let n = arch.layers.len();
    let mut trace = ForwardTrace {
        patches: Vec::with_capacity(n),
        pre: Vec::with_capacity(n),
        post: Vec::with_capacity(n),
    };
    for (l, (spec, p)) in arch.layers.iter().zip(&params.layers).enumerate() {
        let x = if l == 0 { input } else { &trace.post[l - 1][..] };
        let patches = spec.patches(x);
        let z = backend.linear(l, p, &patches)?;
        if z.rows() != patches.rows() || z.cols() != spec.neurons() {
            return Err(Error::Contract(format!("backend returned a {}x{} block for layer {l}", z.rows(), z.cols())));
        }
        let positions = spec.positions();
        let mut pre = vec![0.0; spec.output_len()];
        for pos in 0..positions {
            for (o, v) in z.row(pos).iter().enumerate() {
                pre[o * positions + pos] = v + p.bias[o];
            }
        }
        let post = if l + 1 == n {
            pre.clone()
        } else {
            pre.iter().map(|&v| spec.activation.apply(v)).collect()
        };
        trace.patches.push(patches);
        trace.pre.push(pre);
        trace.post.push(post);
    }
    Ok(trace)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// `∂L/∂z` for every layer, with `z` the pre-activation in channel-major layout.
/// For the last layer this is `softmax(z) − onehot(label)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradients {
    pub layers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|p| Matrix::zeros(p.weights.rows(), p.weights.cols()))
                .collect(),
            bias: params.layers.iter().map(|p| vec![0.0; p.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            let rows = a.rows();
            for i in 0..rows {
                for (x, y) in a.row_mut(i).iter_mut().zip(b.row(i)) {
                    *x += y;
                }
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn backward(params: &NetworkParams, trace: &ForwardTrace, label: usize) -> Result<(Gradients, OutputGradients)> {
    let n = params.arch.layers.len();
    if trace.pre.len() != n || trace.patches.len() != n || trace.post.len() != n {
        return Err(Error::Contract(format!(
            "forward trace covers {} layers, network has {n}",
            trace.pre.len()
        )));
    }
    let classes = params.arch.classes();
    if label >= classes {
        return Err(Error::Contract(format!("label {label} outside {classes} classes")));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut deltas = vec![Vec::new(); n];

    let mut delta = softmax(&trace.pre[n - 1]);
    delta[label] -= 1.0;
    for l in (0..n).rev() {
        let spec = &params.arch.layers[l];
        let p = &params.layers[l];
        let patches = &trace.patches[l];
        let positions = spec.positions();
        let fan_in = spec.fan_in();
        let gw = &mut grads.weights[l];
        let mut dpatches = Matrix::zeros(positions, fan_in);
        for o in 0..spec.neurons() {
            let mut db = 0.0;
            for pos in 0..positions {
                let d = delta[o * positions + pos];
                if d == 0.0 {
                    continue;
                }
                db += d;
                for (g, x) in gw.row_mut(o).iter_mut().zip(patches.row(pos)) {
                    *g += d * x;
                }
                for (dp, w) in dpatches.row_mut(pos).iter_mut().zip(p.weights.row(o)) {
                    *dp += d * w;
                }
            }
            grads.bias[l][o] = db;
        }
        if l > 0 {
            let dx = spec.fold_patches(&dpatches);
            let prev = &params.arch.layers[l - 1];
            let z = &trace.pre[l - 1];
            let next: Vec<f64> = dx
                .iter()
                .zip(z)
                .map(|(g, &zv)| g * prev.activation.derivative(zv))
                .collect();
            deltas[l] = std::mem::replace(&mut delta, next);
        } else {
            deltas[0] = std::mem::take(&mut delta);
        }
    }
    Ok((grads, OutputGradients { layers: deltas }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_cnn_shapes() {
        let a = Architecture::desk_cnn(10);
        assert_eq!(a.input_len(), 64);
        assert_eq!(a.classes(), 10);
        assert_eq!(a.layers[0].fan_in(), 9);
        assert_eq!(a.layers[1].fan_in(), 144);
        assert_eq!(a.layers[1].positions(), 16);
        assert_eq!(a.layers[2].fan_in(), 512);
    }

    #[test]
    fn mismatched_layers_rejected() {
        let err = Architecture::new(vec![
            LayerSpec::dense(4, 3, Activation::Relu),
            LayerSpec::dense(2, 2, Activation::None),
        ]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let arch = Architecture::new(vec![LayerSpec::dense(3, 3, Activation::None)]).unwrap();
        let mut p = NetworkParams::zeros(arch);
        for i in 0..3 {
            p.layers[0].weights.set(i, i, 1.0);
        }
        let t = forward(&p, &[0.2, -1.0, 3.0]).unwrap();
        assert_eq!(t.scores(), &[0.2, -1.0, 3.0]);
        assert!(forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let arch = Architecture::new(vec![
            LayerSpec::dense(4, 5, Activation::Relu),
            LayerSpec::dense(5, 4, Activation::None),
        ])
        .unwrap();
        let p = NetworkParams::zeros(arch);
        let t = forward(&p, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(t.scores().iter().all(|&v| v == 0.0));
        assert!(softmax(t.scores()).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn patches_follow_channel_row_column_order() {
        let spec = LayerSpec::conv(2, 1, (3, 3), (2, 2), Activation::None);
        let input: Vec<f64> = (0..18).map(f64::from).collect();
        let m = spec.patches(&input);
        assert_eq!((m.rows(), m.cols()), (4, 8));
        assert_eq!(m.row(0), &[0.0, 1.0, 3.0, 4.0, 9.0, 10.0, 12.0, 13.0]);
        assert_eq!(m.row(3), &[4.0, 5.0, 7.0, 8.0, 13.0, 14.0, 16.0, 17.0]);
    }

    #[test]
    fn last_delta_is_softmax_minus_onehot() {
        let arch = Architecture::new(vec![LayerSpec::dense(2, 3, Activation::None)]).unwrap();
        let p = NetworkParams::init(arch, 1);
        let t = forward(&p, &[0.4, 0.9]).unwrap();
        let (_, d) = backward(&p, &t, 2).unwrap();
        let mut expect = softmax(t.scores());
        expect[2] -= 1.0;
        assert_eq!(d.layers[0], expect);
        assert!(backward(&p, &t, 3).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}

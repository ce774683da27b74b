//! Built-in no-padding convolutional scorer.
//!
//! Every layer is valid-mode (no padding), so a forward pass over an
//! `n x n` window with `n = L_i + k * S_f` yields a `(k + 1) x (k + 1)` grid
//! whose entry `(h, w)` is exactly the score of the `L_i x L_i` patch at
//! `(h * S_f, w * S_f)`. Each output element is accumulated in the same order
//! regardless of the window size, so the two agree bit for bit.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbImage;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type for tensors and parameters.
pub trait Real: Float + std::ops::AddAssign + Send + Sync + std::fmt::Debug + 'static {}
impl<T: Float + std::ops::AddAssign + Send + Sync + std::fmt::Debug + 'static> Real for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// `kernel x kernel` valid convolution, stride 1. `kernel == 1` is the 1x1 head.
    Conv {
        kernel: usize,
        c_in: usize,
        c_out: usize,
    },
    Relu,
    /// 2x2 max pooling, stride 2.
    MaxPool,
    /// Channel softmax; must be last, over exactly two channels (normal, tumor).
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    pub input_channels: usize,
    pub layers: Vec<Layer>,
}

impl ConvNetSpec {
    /// Default desk-scale scorer: receptive field 20, stride 4.
    pub fn toy() -> Self {
        Self::toy_with_widths(6, 8, 16)
    }

    pub fn toy_with_widths(c1: usize, c2: usize, c3: usize) -> Self {
        use Layer::*;
        ConvNetSpec {
            input_channels: 3,
            layers: vec![
                Conv { kernel: 5, c_in: 3, c_out: c1 },
                Relu,
                MaxPool,
                Conv { kernel: 5, c_in: c1, c_out: c2 },
                Relu,
                MaxPool,
                Conv { kernel: 2, c_in: c2, c_out: c3 },
                Relu,
                Conv { kernel: 1, c_in: c3, c_out: 2 },
                Softmax,
            ],
        }
    }

    /// `(receptive_field, total_stride)` after checking channel consistency.
    pub fn net_geometry(&self) -> Result<(usize, usize)> {
        let mut channels = self.input_channels;
        if channels == 0 {
            return Err(Error::Spec("input_channels must be positive".into()));
        }
        let (mut rf, mut jump) = (1usize, 1usize);
        let n = self.layers.len();
        for (idx, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv { kernel, c_in, c_out } => {
                    if kernel == 0 || c_out == 0 {
                        return Err(Error::Spec(format!("layer {idx}: empty convolution")));
                    }
                    if c_in != channels {
                        return Err(Error::Spec(format!(
                            "layer {idx}: conv expects {c_in} input channels, previous layer gives {channels}"
                        )));
                    }
                    rf += (kernel - 1) * jump;
                    channels = c_out;
                }
                Layer::Relu => {}
                Layer::MaxPool => {
                    rf += jump;
                    jump *= 2;
                }
                Layer::Softmax => {
                    if idx + 1 != n {
                        return Err(Error::Spec(format!("layer {idx}: softmax must be the last layer")));
                    }
                    if channels != 2 {
                        return Err(Error::Spec(format!(
                            "softmax needs exactly 2 channels, got {channels}"
                        )));
                    }
                }
            }
        }
        if self.layers.last() != Some(&Layer::Softmax) {
            return Err(Error::Spec("last layer must be a 2-channel softmax".into()));
        }
        Ok((rf, jump))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Conv { kernel, c_in, c_out } => c_out * c_in * kernel * kernel + c_out,
                _ => 0,
            })
            .sum()
    }
}

pub fn derive_net_geometry(spec: &ConvNetSpec) -> Result<(usize, usize)> {
    spec.net_geometry()
}

/// Channel-major `c x h x w` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    fn row(&self, c: usize, y: usize) -> &[T] {
        let o = (c * self.h + y) * self.w;
        &self.data[o..o + self.w]
    }

    /// RGB pixels mapped to `[-1, 1]`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut t = Self::zeros(3, h, w);
        let raw = img.as_raw();
        let scale = T::from(1.0 / 127.5).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = T::from(raw[(y * w + x) * 3 + c]).unwrap();
                    t.data[(c * h + y) * w + x] = v * scale - T::one();
                }
            }
        }
        t
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| U::from(v).unwrap()).collect(),
        }
    }
}

/// Weights `[c_out][c_in][ky][kx]` and biases of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    fn zeros(kernel: usize, c_in: usize, c_out: usize) -> Self {
        ConvParams {
            kernel,
            c_in,
            c_out,
            weights: vec![T::zero(); c_out * c_in * kernel * kernel],
            bias: vec![T::zero(); c_out],
        }
    }

    #[inline]
    fn w(&self, co: usize, ci: usize, ky: usize, kx: usize) -> T {
        self.weights[((co * self.c_in + ci) * self.kernel + ky) * self.kernel + kx]
    }
}

/// Multiply-accumulate counter for convolution layers.
#[derive(Debug, Default)]
pub struct OpCounter {
    macs: AtomicU64,
    passes: AtomicU64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn macs(&self) -> u64 {
        self.macs.load(Ordering::Relaxed)
    }

    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    fn add(&self, macs: u64) {
        self.macs.fetch_add(macs, Ordering::Relaxed);
    }
}

fn conv_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>, ops: &OpCounter) -> Tensor<T> {
    let k = p.kernel;
    let (oh, ow) = (x.h + 1 - k, x.w + 1 - k);
    let mut out = Tensor::zeros(p.c_out, oh, ow);
    for co in 0..p.c_out {
        for y in 0..oh {
            let o = (co * oh + y) * ow;
            let out_row = &mut out.data[o..o + ow];
            out_row.fill(p.bias[co]);
            for ci in 0..p.c_in {
                for ky in 0..k {
                    let in_row = x.row(ci, y + ky);
                    for kx in 0..k {
                        let wv = p.w(co, ci, ky, kx);
                        for (acc, &v) in out_row.iter_mut().zip(&in_row[kx..kx + ow]) {
                            *acc += wv * v;
                        }
                    }
                }
            }
        }
    }
    ops.add((p.c_out * p.c_in * k * k * oh * ow) as u64);
    out
}

fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

fn pool_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for y in 0..oh {
            let r0 = x.row(c, 2 * y);
            let r1 = x.row(c, 2 * y + 1);
            for xo in 0..ow {
                let m = r0[2 * xo].max(r0[2 * xo + 1]).max(r1[2 * xo]).max(r1[2 * xo + 1]);
                out.data[(c * oh + y) * ow + xo] = m;
            }
        }
    }
    out
}

fn softmax_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let n = x.h * x.w;
    for i in 0..n {
        let m = (0..x.c).map(|c| x.data[c * n + i]).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for c in 0..x.c {
            let e = (x.data[c * n + i] - m).exp();
            out.data[c * n + i] = e;
            sum += e;
        }
        for c in 0..x.c {
            out.data[c * n + i] = out.data[c * n + i] / sum;
        }
    }
    out
}

/// Tumor probabilities over the output grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ProbabilityGrid {
    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.values[h * self.width + w]
    }
}

/// Anything that turns an RGB window into a grid of tumor probabilities at
/// stride `total_stride`, one per `receptive_field`-sized patch.
pub trait Scorer: Sync {
    fn receptive_field(&self) -> usize;

    fn total_stride(&self) -> usize;

    fn score_window(&self, window: &RgbImage, ops: &OpCounter) -> Result<ProbabilityGrid>;

    /// Score of one `receptive_field`-sized patch.
    fn patch_score(&self, patch: &RgbImage, ops: &OpCounter) -> Result<f32> {
        let rf = self.receptive_field();
        if patch.width() as usize != rf || patch.height() as usize != rf {
            return Err(Error::Size {
                side: patch.width() as usize,
                msg: format!("patch must be exactly {rf}x{rf}"),
            });
        }
        Ok(self.score_window(patch, ops)?.values[0])
    }

    /// Output grid side for an input side, checking alignment.
    fn output_side(&self, side: usize) -> Result<usize> {
        output_side(self.receptive_field(), self.total_stride(), side)
    }
}

/// Output grid side for an input of `side` pixels.
pub fn output_side(rf: usize, s: usize, side: usize) -> Result<usize> {
    if side < rf {
        return Err(Error::Size {
            side,
            msg: format!("smaller than the receptive field {rf}"),
        });
    }
    if (side - rf) % s != 0 {
        return Err(Error::Size {
            side,
            msg: format!("side - {rf} is not a multiple of the stride {s}"),
        });
    }
    Ok((side - rf) / s + 1)
}

/// Convolutional network with parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    spec: ConvNetSpec,
    params: Vec<ConvParams<T>>,
    receptive_field: usize,
    total_stride: usize,
}

/// Activations kept for backpropagation: `acts[0]` is the input,
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub acts: Vec<Tensor<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().unwrap()
    }
}

impl<T: Real> Network<T> {
    pub fn zeros(spec: ConvNetSpec) -> Result<Self> {
        let (receptive_field, total_stride) = spec.net_geometry()?;
        let params = spec
            .layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Conv { kernel, c_in, c_out } => Some(ConvParams::zeros(kernel, c_in, c_out)),
                _ => None,
            })
            .collect();
        Ok(Network {
            spec,
            params,
            receptive_field,
            total_stride,
        })
    }

    /// He-uniform weights, zero biases.
    pub fn random(spec: ConvNetSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for p in &mut net.params {
            let fan_in = (p.c_in * p.kernel * p.kernel) as f64;
            let a = (6.0 / fan_in).sqrt();
            for w in &mut p.weights {
                *w = T::from(rng.gen_range(-a..a)).unwrap();
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.params
    }

    /// All parameters flattened in file order (per conv: weights, then bias).
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.spec.param_count());
        for p in &self.params {
            out.extend_from_slice(&p.weights);
            out.extend_from_slice(&p.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.spec.param_count() {
            return Err(Error::Spec(format!(
                "expected {} parameters, got {}",
                self.spec.param_count(),
                flat.len()
            )));
        }
        let mut o = 0;
        for p in &mut self.params {
            let nw = p.weights.len();
            p.weights.copy_from_slice(&flat[o..o + nw]);
            o += nw;
            let nb = p.bias.len();
            p.bias.copy_from_slice(&flat[o..o + nb]);
            o += nb;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut net = Network::<U>::zeros(self.spec.clone()).expect("spec already validated");
        let flat: Vec<U> = self.flat_params().iter().map(|&v| U::from(v).unwrap()).collect();
        net.set_flat_params(&flat).unwrap();
        net
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != self.spec.input_channels {
            return Err(Error::Size {
                side: x.w,
                msg: format!(
                    "input has {} channels, network expects {}",
                    x.c, self.spec.input_channels
                ),
            });
        }
        for side in [x.h, x.w] {
            output_side(self.receptive_field, self.total_stride, side)?;
        }
        Ok(())
    }

    /// Full forward pass keeping every activation.
    pub fn forward_trace(&self, x: &Tensor<T>, ops: &OpCounter) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        let mut pi = 0;
        for layer in &self.spec.layers {
            let cur = acts.last().unwrap();
            let next = match layer {
                Layer::Conv { .. } => {
                    pi += 1;
                    conv_forward(cur, &self.params[pi - 1], ops)
                }
                Layer::Relu => relu_forward(cur),
                Layer::MaxPool => pool_forward(cur),
                Layer::Softmax => softmax_forward(cur),
            };
            acts.push(next);
        }
        ops.passes.fetch_add(1, Ordering::Relaxed);
        Ok(ForwardTrace { acts })
    }

    /// Forward pass returning the two-channel softmax output.
    pub fn forward(&self, x: &Tensor<T>, ops: &OpCounter) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut pi = 0;
        for layer in &self.spec.layers {
            cur = match layer {
                Layer::Conv { .. } => {
                    pi += 1;
                    conv_forward(&cur, &self.params[pi - 1], ops)
                }
                Layer::Relu => relu_forward(&cur),
                Layer::MaxPool => pool_forward(&cur),
                Layer::Softmax => softmax_forward(&cur),
            };
        }
        ops.passes.fetch_add(1, Ordering::Relaxed);
        Ok(cur)
    }

    /// Mean cross-entropy over output positions and its parameter gradient.
    /// `labels` holds one class index per output position.
    pub fn loss_and_grad(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        ops: &OpCounter,
    ) -> Result<(T, Vec<ConvParams<T>>)> {
        let trace = self.forward_trace(x, ops)?;
        let out = trace.output();
        let n = out.h * out.w;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} output positions",
                labels.len()
            )));
        }
        let inv_n = T::one() / T::from(n).unwrap();
        let tiny = T::from(1e-12).unwrap();
        let mut loss = T::zero();
        // softmax + cross-entropy: d/dlogits = (p - onehot) / n
        let mut grad = out.clone();
        for (i, &lab) in labels.iter().enumerate() {
            loss += -(out.data[lab * n + i].max(tiny)).ln();
            for c in 0..out.c {
                let onehot = if c == lab { T::one() } else { T::zero() };
                grad.data[c * n + i] = (out.data[c * n + i] - onehot) * inv_n;
            }
        }
        loss = loss * inv_n;

        let mut grads: Vec<ConvParams<T>> = self
            .params
            .iter()
            .map(|p| ConvParams::zeros(p.kernel, p.c_in, p.c_out))
            .collect();
        let mut pi = self.params.len();
        let layers = &self.spec.layers;
        // skip the softmax: `grad` is already w.r.t. its input
        for li in (0..layers.len() - 1).rev() {
            let input = &trace.acts[li];
            grad = match layers[li] {
                Layer::Conv { .. } => {
                    pi -= 1;
                    conv_backward(input, &self.params[pi], &grad, &mut grads[pi], li > 0)
                }
                Layer::Relu => {
                    let mut g = grad;
                    for (gv, &xv) in g.data.iter_mut().zip(&input.data) {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    g
                }
                Layer::MaxPool => pool_backward(input, &grad),
                Layer::Softmax => unreachable!("softmax is validated to be last"),
            };
        }
        Ok((loss, grads))
    }
}

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dout: &Tensor<T>,
    g: &mut ConvParams<T>,
    need_input_grad: bool,
) -> Tensor<T> {
    let k = p.kernel;
    let (oh, ow) = (dout.h, dout.w);
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    for co in 0..p.c_out {
        for y in 0..oh {
            let drow = dout.row(co, y);
            g.bias[co] += drow.iter().fold(T::zero(), |a, &b| a + b);
            for ci in 0..p.c_in {
                for ky in 0..k {
                    let in_row = x.row(ci, y + ky);
                    for kx in 0..k {
                        let mut acc = T::zero();
                        for (&d, &v) in drow.iter().zip(&in_row[kx..kx + ow]) {
                            acc += d * v;
                        }
                        g.weights[((co * p.c_in + ci) * k + ky) * k + kx] += acc;
                        if need_input_grad {
                            let wv = p.w(co, ci, ky, kx);
                            let o = (ci * x.h + y + ky) * x.w + kx;
                            for (dxv, &d) in dx.data[o..o + ow].iter_mut().zip(drow) {
                                *dxv += wv * d;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_backward<T: Real>(x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        for y in 0..dout.h {
            for xo in 0..dout.w {
                let cands = [
                    (2 * y, 2 * xo),
                    (2 * y, 2 * xo + 1),
                    (2 * y + 1, 2 * xo),
                    (2 * y + 1, 2 * xo + 1),
                ];
                let mut best = cands[0];
                for &(yy, xx) in &cands[1..] {
                    if x.at(c, yy, xx) > x.at(c, best.0, best.1) {
                        best = (yy, xx);
                    }
                }
                dx.data[(c * x.h + best.0) * x.w + best.1] += dout.at(c, y, xo);
            }
        }
    }
    dx
}

impl Scorer for Network<f32> {
    fn receptive_field(&self) -> usize {
        self.receptive_field
    }

    fn total_stride(&self) -> usize {
        self.total_stride
    }

    fn score_window(&self, window: &RgbImage, ops: &OpCounter) -> Result<ProbabilityGrid> {
        let out = self.forward(&Tensor::from_rgb(window), ops)?;
        let n = out.h * out.w;
        Ok(ProbabilityGrid {
            height: out.h,
            width: out.w,
            values: out.data[n..2 * n].to_vec(),
        })
    }
}

/// Scores every patch with the same constant probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub probability: f32,
    pub receptive_field: usize,
    pub total_stride: usize,
}

impl Scorer for ConstantScorer {
    fn receptive_field(&self) -> usize {
        self.receptive_field
    }

    fn total_stride(&self) -> usize {
        self.total_stride
    }

    fn score_window(&self, window: &RgbImage, _ops: &OpCounter) -> Result<ProbabilityGrid> {
        let h = self.output_side(window.height() as usize)?;
        let w = self.output_side(window.width() as usize)?;
        Ok(ProbabilityGrid {
            height: h,
            width: w,
            values: vec![self.probability; h * w],
        })
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"FCNW";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    version: u32,
    input_channels: usize,
    layers: Vec<Layer>,
    param_count: usize,
}

impl Network<f32> {
    /// `.fcnw` layout: `b"FCNW"`, u32 LE header length, JSON header, then every
    /// convolution's weights (`[c_out][c_in][ky][kx]`) followed by its biases as
    /// little-endian f32, in layer order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = WeightsHeader {
            version: WEIGHTS_VERSION,
            input_channels: self.spec.input_channels,
            layers: self.spec.layers.clone(),
            param_count: self.spec.param_count(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 4 * header.param_count);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.flat_params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Spec(format!("weights file: {msg}"));
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u32::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: WeightsHeader =
            serde_json::from_slice(&r[..len]).map_err(|e| bad(&e.to_string()))?;
        if header.version != WEIGHTS_VERSION {
            return Err(bad("unsupported version"));
        }
        let spec = ConvNetSpec {
            input_channels: header.input_channels,
            layers: header.layers,
        };
        let mut net = Network::zeros(spec)?;
        let blob = &r[len..];
        if blob.len() != 4 * net.spec.param_count() || header.param_count != net.spec.param_count() {
            return Err(bad("parameter blob size does not match the layer list"));
        }
        let flat: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        net.set_flat_params(&flat)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

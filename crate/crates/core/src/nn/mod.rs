//! Minimal dense tensor math with hand-written forward and reverse passes
//! for the fixed layer set the scorer needs.
//!
//! The layer set is: 3×3 stride-1 zero-padded convolution, ReLU, 2×2
//! max-pooling, global average pooling, dense, sigmoid, and inverted
//! dropout. [`backward`] returns gradients with respect to every parameter
//! *and* with respect to the network input; the input gradient is what mask
//! optimization and saliency consume. All math runs in the scalar type `T`
//! and is deterministic: evaluation mode is a pure function, training mode
//! is pure given `(input, weights, dropout_seed)`.

pub mod gradcheck;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::num::Real;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Tensor of the given shape filled with `fill`.
    pub fn new(shape: Vec<usize>, fill: T) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![fill; len] }
    }

    /// Tensor over an existing row-major buffer.
    ///
    /// Panics if the buffer length does not match the shape.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data length must match shape");
        Self { shape, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `(channels, height, width)` view of a rank-3 tensor.
    pub fn dims3(&self) -> Option<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    /// The single value of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one value.
    pub fn scalar(&self) -> T {
        assert_eq!(self.data.len(), 1, "scalar() requires a one-element tensor");
        self.data[0]
    }
}

/// One network layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    /// 3×3 convolution, stride 1, zero padding 1 (spatial dims preserved).
    /// Weights laid out `[out_ch][in_ch][3][3]`, one bias per output channel.
    Conv2d { in_ch: usize, out_ch: usize, weights: Vec<T>, biases: Vec<T> },
    Relu,
    /// 2×2 max pooling with stride 2; a trailing odd row/column is dropped.
    /// Ties resolve to the lowest flat index.
    MaxPool2x2,
    /// Per-channel mean over the spatial grid: `(C,H,W) → (C,)`.
    GlobalAvgPool,
    /// Fully connected over the flattened input; weights `[out][in]`.
    Dense { in_dim: usize, out_dim: usize, weights: Vec<T>, biases: Vec<T> },
    Sigmoid,
    /// Inverted dropout: in train mode each activation is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`; identity
    /// in eval mode.
    Dropout { rate: f64 },
}

impl<T> Layer<T> {
    /// Human-readable layer kind, as used in serialized models.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Dense { .. } => "dense",
            Layer::Sigmoid => "sigmoid",
            Layer::Dropout { .. } => "dropout",
        }
    }
}

/// Execution mode for [`forward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Deterministic inference; dropout is the identity.
    Eval,
    /// Training: dropout masks are drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

/// Per-layer records a matching [`backward`] call needs.
pub struct Cache<T> {
    entries: Vec<CacheEntry<T>>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

enum CacheEntry<T> {
    Conv2d { input: Tensor<T> },
    Relu { active: Vec<bool> },
    MaxPool2x2 { in_shape: (usize, usize, usize), argmax: Vec<usize> },
    GlobalAvgPool { in_shape: (usize, usize, usize) },
    Dense { input: Tensor<T> },
    Sigmoid { output: Tensor<T> },
    /// `None` in eval mode (identity); otherwise the realized scale factors
    /// (0 or 1/(1−rate)) reused verbatim by the backward pass.
    Dropout { scale: Option<Vec<T>> },
}

/// Gradients for one layer's parameters; empty for parameterless layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> ParamGrads<T> {
    fn empty() -> Self {
        Self { weights: Vec::new(), biases: Vec::new() }
    }

    /// Zero gradients matching one layer's parameter shapes.
    pub fn zeros_for(layer: &Layer<T>) -> Self {
        match layer {
            Layer::Conv2d { weights, biases, .. } | Layer::Dense { weights, biases, .. } => Self {
                weights: vec![T::zero(); weights.len()],
                biases: vec![T::zero(); biases.len()],
            },
            _ => Self::empty(),
        }
    }
}

/// Zero parameter gradients for a whole stack, aligned with `layers`.
pub fn zero_param_grads<T: Real>(layers: &[Layer<T>]) -> Vec<ParamGrads<T>> {
    layers.iter().map(ParamGrads::zeros_for).collect()
}

/// Elementwise `acc += g` over aligned parameter gradients.
///
/// Panics if the two gradient sets have different shapes.
pub fn add_param_grads<T: Real>(acc: &mut [ParamGrads<T>], g: &[ParamGrads<T>]) {
    assert_eq!(acc.len(), g.len(), "gradient sets must align");
    for (a, b) in acc.iter_mut().zip(g.iter()) {
        assert_eq!(a.weights.len(), b.weights.len());
        assert_eq!(a.biases.len(), b.biases.len());
        for (x, y) in a.weights.iter_mut().zip(b.weights.iter()) {
            *x += *y;
        }
        for (x, y) in a.biases.iter_mut().zip(b.biases.iter()) {
            *x += *y;
        }
    }
}

/// Errors from the forward/backward passes.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {layer} ({kind}): shape mismatch: {detail}")]
    ShapeMismatch { layer: usize, kind: &'static str, detail: String },
    #[error("stale cache: {detail}")]
    StaleCache { detail: String },
}

fn axpy<T: Real>(alpha: T, src: &[T], dst: &mut [T]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += alpha * *s;
    }
}

/// Dot product with four independent accumulators (fixed summation order).
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc0 = T::zero();
    let mut acc1 = T::zero();
    let mut acc2 = T::zero();
    let mut acc3 = T::zero();
    for i in 0..chunks {
        let j = 4 * i;
        acc0 += a[j] * b[j];
        acc1 += a[j + 1] * b[j + 1];
        acc2 += a[j + 2] * b[j + 2];
        acc3 += a[j + 3] * b[j + 3];
    }
    let mut s = (acc0 + acc1) + (acc2 + acc3);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

/// 3×3/stride-1/pad-1 convolution arranged as 9 shifted AXPY passes per
/// (out, in) channel pair so the inner loops stay vectorizable.
fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    in_ch: usize,
    out_ch: usize,
    weights: &[T],
    biases: &[T],
    h: usize,
    w: usize,
) -> Tensor<T> {
    let mut out = Tensor::new(vec![out_ch, h, w], T::zero());
    for oc in 0..out_ch {
        let out_plane = &mut out.data[oc * h * w..(oc + 1) * h * w];
        out_plane.fill(biases[oc]);
        for ic in 0..in_ch {
            let in_plane = &input.data[ic * h * w..(ic + 1) * h * w];
            let wbase = (oc * in_ch + ic) * 9;
            for dy in 0..3usize {
                let y_lo = if dy == 0 { 1 } else { 0 };
                let y_hi = if dy == 2 { h - 1 } else { h };
                for dx in 0..3usize {
                    let wv = weights[wbase + dy * 3 + dx];
                    let x_lo = if dx == 0 { 1 } else { 0 };
                    let x_hi = if dx == 2 { w - 1 } else { w };
                    let n = x_hi - x_lo;
                    if n == 0 {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let src_off = (y + dy - 1) * w + (x_lo + dx) - 1;
                        let dst_off = y * w + x_lo;
                        axpy(wv, &in_plane[src_off..src_off + n], &mut out_plane[dst_off..dst_off + n]);
                    }
                }
            }
        }
    }
    out
}

/// Gradient of the convolution with respect to its input (transposed pass,
/// same shifted-AXPY structure as the forward).
fn conv2d_backward_input<T: Real>(
    gout: &Tensor<T>,
    in_ch: usize,
    out_ch: usize,
    weights: &[T],
    h: usize,
    w: usize,
) -> Tensor<T> {
    let mut gin = Tensor::new(vec![in_ch, h, w], T::zero());
    for oc in 0..out_ch {
        let gout_plane = &gout.data[oc * h * w..(oc + 1) * h * w];
        for ic in 0..in_ch {
            let gin_plane = &mut gin.data[ic * h * w..(ic + 1) * h * w];
            let wbase = (oc * in_ch + ic) * 9;
            for dy in 0..3usize {
                let y_lo = if dy == 0 { 1 } else { 0 };
                let y_hi = if dy == 2 { h - 1 } else { h };
                for dx in 0..3usize {
                    let wv = weights[wbase + dy * 3 + dx];
                    let x_lo = if dx == 0 { 1 } else { 0 };
                    let x_hi = if dx == 2 { w - 1 } else { w };
                    let n = x_hi - x_lo;
                    if n == 0 {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let gin_off = (y + dy - 1) * w + (x_lo + dx) - 1;
                        let gout_off = y * w + x_lo;
                        axpy(wv, &gout_plane[gout_off..gout_off + n], &mut gin_plane[gin_off..gin_off + n]);
                    }
                }
            }
        }
    }
    gin
}

/// Gradients of the convolution with respect to its weights and biases.
fn conv2d_backward_params<T: Real>(
    gout: &Tensor<T>,
    input: &Tensor<T>,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); out_ch * in_ch * 9];
    let mut db = vec![T::zero(); out_ch];
    for oc in 0..out_ch {
        let gout_plane = &gout.data[oc * h * w..(oc + 1) * h * w];
        let mut bsum = T::zero();
        for v in gout_plane {
            bsum += *v;
        }
        db[oc] = bsum;
        for ic in 0..in_ch {
            let in_plane = &input.data[ic * h * w..(ic + 1) * h * w];
            let wbase = (oc * in_ch + ic) * 9;
            for dy in 0..3usize {
                let y_lo = if dy == 0 { 1 } else { 0 };
                let y_hi = if dy == 2 { h - 1 } else { h };
                for dx in 0..3usize {
                    let x_lo = if dx == 0 { 1 } else { 0 };
                    let x_hi = if dx == 2 { w - 1 } else { w };
                    let n = x_hi - x_lo;
                    if n == 0 {
                        continue;
                    }
                    let mut acc = T::zero();
                    for y in y_lo..y_hi {
                        let in_off = (y + dy - 1) * w + (x_lo + dx) - 1;
                        let gout_off = y * w + x_lo;
                        acc += dot(&gout_plane[gout_off..gout_off + n], &in_plane[in_off..in_off + n]);
                    }
                    dw[wbase + dy * 3 + dx] = acc;
                }
            }
        }
    }
    (dw, db)
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Kink-proximity probe accumulated by [`forward_with_margin`]: the minimum
/// over all ReLU units of |pre-activation| and over all maxpool windows of
/// (max − second max).
struct MarginProbe {
    min_margin: f64,
}

fn forward_internal<T: Real>(
    layers: &[Layer<T>],
    input: &Tensor<T>,
    mode: Mode,
    mut probe: Option<&mut MarginProbe>,
) -> Result<(Tensor<T>, Cache<T>), NnError> {
    let mut rng = match mode {
        Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        Mode::Eval => None,
    };
    let input_shape = input.shape().to_vec();
    let mut value = input.clone();
    let mut entries = Vec::with_capacity(layers.len());

    for (li, layer) in layers.iter().enumerate() {
        let mismatch = |detail: String| NnError::ShapeMismatch { layer: li, kind: layer.kind(), detail };
        match layer {
            Layer::Conv2d { in_ch, out_ch, weights, biases } => {
                let (c, h, w) = value
                    .dims3()
                    .ok_or_else(|| mismatch(format!("expected rank-3 input, got shape {:?}", value.shape())))?;
                if c != *in_ch {
                    return Err(mismatch(format!("expected {in_ch} input channels, got {c}")));
                }
                if weights.len() != out_ch * in_ch * 9 || biases.len() != *out_ch {
                    return Err(mismatch(format!(
                        "parameter sizes {}/{} do not match {in_ch}→{out_ch} 3x3 kernel",
                        weights.len(),
                        biases.len()
                    )));
                }
                let out = conv2d_forward(&value, *in_ch, *out_ch, weights, biases, h, w);
                entries.push(CacheEntry::Conv2d { input: value });
                value = out;
            }
            Layer::Relu => {
                if let Some(p) = probe.as_deref_mut() {
                    for v in value.data() {
                        let m = v.as_f64().abs();
                        if m < p.min_margin {
                            p.min_margin = m;
                        }
                    }
                }
                let active: Vec<bool> = value.data().iter().map(|v| *v > T::zero()).collect();
                for v in value.data_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                entries.push(CacheEntry::Relu { active });
            }
            Layer::MaxPool2x2 => {
                let (c, h, w) = value
                    .dims3()
                    .ok_or_else(|| mismatch(format!("expected rank-3 input, got shape {:?}", value.shape())))?;
                if h < 2 || w < 2 {
                    return Err(mismatch(format!("spatial dims {h}x{w} too small for 2x2 pooling")));
                }
                let ph = h / 2;
                let pw = w / 2;
                let mut out = Tensor::new(vec![c, ph, pw], T::zero());
                let mut argmax = Vec::with_capacity(c * ph * pw);
                for ch in 0..c {
                    for py in 0..ph {
                        for px in 0..pw {
                            let base = ch * h * w + (2 * py) * w + 2 * px;
                            let cand = [base, base + 1, base + w, base + w + 1];
                            let mut best = cand[0];
                            for &idx in &cand[1..] {
                                if value.data[idx] > value.data[best] {
                                    best = idx;
                                }
                            }
                            if let Some(p) = probe.as_deref_mut() {
                                let mut second = f64::NEG_INFINITY;
                                for &idx in &cand {
                                    if idx != best {
                                        second = second.max(value.data[idx].as_f64());
                                    }
                                }
                                let margin = value.data[best].as_f64() - second;
                                if margin < p.min_margin {
                                    p.min_margin = margin;
                                }
                            }
                            out.data[ch * ph * pw + py * pw + px] = value.data[best];
                            argmax.push(best);
                        }
                    }
                }
                entries.push(CacheEntry::MaxPool2x2 { in_shape: (c, h, w), argmax });
                value = out;
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = value
                    .dims3()
                    .ok_or_else(|| mismatch(format!("expected rank-3 input, got shape {:?}", value.shape())))?;
                let inv = T::of(1.0 / (h * w) as f64);
                let mut out = Tensor::new(vec![c], T::zero());
                for ch in 0..c {
                    let mut s = T::zero();
                    for v in &value.data[ch * h * w..(ch + 1) * h * w] {
                        s += *v;
                    }
                    out.data[ch] = s * inv;
                }
                entries.push(CacheEntry::GlobalAvgPool { in_shape: (c, h, w) });
                value = out;
            }
            Layer::Dense { in_dim, out_dim, weights, biases } => {
                if value.len() != *in_dim {
                    return Err(mismatch(format!("expected {in_dim} inputs, got {}", value.len())));
                }
                if weights.len() != in_dim * out_dim || biases.len() != *out_dim {
                    return Err(mismatch(format!(
                        "parameter sizes {}/{} do not match dense {in_dim}→{out_dim}",
                        weights.len(),
                        biases.len()
                    )));
                }
                let mut out = Tensor::new(vec![*out_dim], T::zero());
                for o in 0..*out_dim {
                    out.data[o] = biases[o] + dot(&weights[o * in_dim..(o + 1) * in_dim], &value.data);
                }
                entries.push(CacheEntry::Dense { input: value });
                value = out;
            }
            Layer::Sigmoid => {
                for v in value.data_mut() {
                    *v = sigmoid(*v);
                }
                entries.push(CacheEntry::Sigmoid { output: value.clone() });
            }
            Layer::Dropout { rate } => {
                let scale = match rng.as_mut() {
                    Some(r) if *rate > 0.0 => {
                        let keep_scale = T::of(1.0 / (1.0 - rate));
                        let scale: Vec<T> = value
                            .data()
                            .iter()
                            .map(|_| {
                                let u = (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                                if u < *rate {
                                    T::zero()
                                } else {
                                    keep_scale
                                }
                            })
                            .collect();
                        for (v, s) in value.data_mut().iter_mut().zip(scale.iter()) {
                            *v = *v * *s;
                        }
                        Some(scale)
                    }
                    _ => None,
                };
                entries.push(CacheEntry::Dropout { scale });
            }
        }
    }

    let output_shape = value.shape().to_vec();
    Ok((value, Cache { entries, input_shape, output_shape }))
}

/// Run the stack on `input`. Returns the output tensor and the cache
/// [`backward`] needs. In eval mode dropout is the identity; in train mode
/// dropout masks derive deterministically from the mode's seed.
pub fn forward<T: Real>(layers: &[Layer<T>], input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Cache<T>), NnError> {
    forward_internal(layers, input, mode, None)
}

/// [`forward`] that additionally reports the smallest kink margin seen: the
/// minimum over ReLU units of |pre-activation| and over maxpool windows of
/// (max − runner-up). Gradient checking uses it to skip coordinates whose
/// perturbation could cross a non-differentiable point.
pub fn forward_with_margin<T: Real>(
    layers: &[Layer<T>],
    input: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Cache<T>, f64), NnError> {
    let mut probe = MarginProbe { min_margin: f64::INFINITY };
    let (out, cache) = forward_internal(layers, input, mode, Some(&mut probe))?;
    Ok((out, cache, probe.min_margin))
}

fn backward_impl<T: Real>(
    layers: &[Layer<T>],
    cache: &Cache<T>,
    upstream: &Tensor<T>,
    want_params: bool,
) -> Result<(Option<Vec<ParamGrads<T>>>, Tensor<T>), NnError> {
    if cache.entries.len() != layers.len() {
        return Err(NnError::StaleCache {
            detail: format!("cache has {} entries for {} layers", cache.entries.len(), layers.len()),
        });
    }
    if upstream.shape() != cache.output_shape.as_slice() {
        return Err(NnError::StaleCache {
            detail: format!(
                "upstream shape {:?} does not match forward output {:?}",
                upstream.shape(),
                cache.output_shape
            ),
        });
    }

    let mut grads = if want_params { Some(vec![ParamGrads::<T>::empty(); layers.len()]) } else { None };
    let mut g = upstream.clone();

    for (li, (layer, entry)) in layers.iter().zip(cache.entries.iter()).enumerate().rev() {
        let stale = |detail: String| NnError::StaleCache { detail };
        match (layer, entry) {
            (Layer::Conv2d { in_ch, out_ch, weights, .. }, CacheEntry::Conv2d { input }) => {
                let (_, h, w) = input.dims3().expect("cached conv input is rank 3");
                if g.shape() != [*out_ch, h, w] {
                    return Err(stale(format!("layer {li}: conv upstream shape {:?}", g.shape())));
                }
                if let Some(gr) = grads.as_mut() {
                    let (dw, db) = conv2d_backward_params(&g, input, *in_ch, *out_ch, h, w);
                    gr[li] = ParamGrads { weights: dw, biases: db };
                }
                g = conv2d_backward_input(&g, *in_ch, *out_ch, weights, h, w);
            }
            (Layer::Relu, CacheEntry::Relu { active }) => {
                if g.len() != active.len() {
                    return Err(stale(format!("layer {li}: relu upstream length {}", g.len())));
                }
                for (v, a) in g.data_mut().iter_mut().zip(active.iter()) {
                    if !*a {
                        *v = T::zero();
                    }
                }
            }
            (Layer::MaxPool2x2, CacheEntry::MaxPool2x2 { in_shape, argmax }) => {
                let (c, h, w) = *in_shape;
                if g.len() != argmax.len() {
                    return Err(stale(format!("layer {li}: maxpool upstream length {}", g.len())));
                }
                let mut gin = Tensor::new(vec![c, h, w], T::zero());
                for (i, &idx) in argmax.iter().enumerate() {
                    gin.data[idx] += g.data[i];
                }
                g = gin;
            }
            (Layer::GlobalAvgPool, CacheEntry::GlobalAvgPool { in_shape }) => {
                let (c, h, w) = *in_shape;
                if g.len() != c {
                    return Err(stale(format!("layer {li}: gap upstream length {}", g.len())));
                }
                let inv = T::of(1.0 / (h * w) as f64);
                let mut gin = Tensor::new(vec![c, h, w], T::zero());
                for ch in 0..c {
                    let gv = g.data[ch] * inv;
                    for v in &mut gin.data[ch * h * w..(ch + 1) * h * w] {
                        *v = gv;
                    }
                }
                g = gin;
            }
            (Layer::Dense { in_dim, out_dim, weights, .. }, CacheEntry::Dense { input }) => {
                if g.len() != *out_dim {
                    return Err(stale(format!("layer {li}: dense upstream length {}", g.len())));
                }
                if let Some(gr) = grads.as_mut() {
                    let mut dw = vec![T::zero(); in_dim * out_dim];
                    let mut db = vec![T::zero(); *out_dim];
                    for o in 0..*out_dim {
                        db[o] = g.data[o];
                        axpy(g.data[o], &input.data, &mut dw[o * in_dim..(o + 1) * in_dim]);
                    }
                    gr[li] = ParamGrads { weights: dw, biases: db };
                }
                let mut gin = Tensor::new(input.shape().to_vec(), T::zero());
                for o in 0..*out_dim {
                    axpy(g.data[o], &weights[o * in_dim..(o + 1) * in_dim], &mut gin.data);
                }
                g = gin;
            }
            (Layer::Sigmoid, CacheEntry::Sigmoid { output }) => {
                if g.len() != output.len() {
                    return Err(stale(format!("layer {li}: sigmoid upstream length {}", g.len())));
                }
                for (v, y) in g.data_mut().iter_mut().zip(output.data().iter()) {
                    *v = *v * *y * (T::one() - *y);
                }
            }
            (Layer::Dropout { .. }, CacheEntry::Dropout { scale }) => {
                if let Some(scale) = scale {
                    if g.len() != scale.len() {
                        return Err(stale(format!("layer {li}: dropout upstream length {}", g.len())));
                    }
                    for (v, s) in g.data_mut().iter_mut().zip(scale.iter()) {
                        *v = *v * *s;
                    }
                }
            }
            _ => {
                return Err(stale(format!("layer {li}: cache entry kind does not match layer {}", layer.kind())));
            }
        }
    }

    if g.shape() != cache.input_shape.as_slice() {
        return Err(NnError::StaleCache {
            detail: format!("input gradient shape {:?} does not match forward input {:?}", g.shape(), cache.input_shape),
        });
    }
    Ok((grads, g))
}

/// Reverse pass: gradients of a scalar loss with respect to every parameter
/// and to the network input, given `upstream = ∂loss/∂output`.
pub fn backward<T: Real>(
    layers: &[Layer<T>],
    cache: &Cache<T>,
    upstream: &Tensor<T>,
) -> Result<(Vec<ParamGrads<T>>, Tensor<T>), NnError> {
    let (grads, gin) = backward_impl(layers, cache, upstream, true)?;
    Ok((grads.expect("param grads requested"), gin))
}

/// Reverse pass computing only the input gradient (skips all parameter
/// gradient work; roughly halves the cost of conv backward).
pub fn input_gradient<T: Real>(
    layers: &[Layer<T>],
    cache: &Cache<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (_, gin) = backward_impl(layers, cache, upstream, false)?;
    Ok(gin)
}

/// In-place SGD update `w ← w − lr·g` over every parameterized layer.
///
/// Panics if `grads` is not aligned with `layers` (a programming error).
pub fn sgd_step<T: Real>(layers: &mut [Layer<T>], grads: &[ParamGrads<T>], learning_rate: T) {
    assert_eq!(layers.len(), grads.len(), "gradients must align with layers");
    for (layer, g) in layers.iter_mut().zip(grads.iter()) {
        match layer {
            Layer::Conv2d { weights, biases, .. } | Layer::Dense { weights, biases, .. } => {
                assert_eq!(weights.len(), g.weights.len(), "weight gradient shape");
                assert_eq!(biases.len(), g.biases.len(), "bias gradient shape");
                for (w, gw) in weights.iter_mut().zip(g.weights.iter()) {
                    *w = *w - learning_rate * *gw;
                }
                for (b, gb) in biases.iter_mut().zip(g.biases.iter()) {
                    *b = *b - learning_rate * *gb;
                }
            }
            _ => {
                assert!(g.weights.is_empty() && g.biases.is_empty(), "gradient for a parameterless layer");
            }
        }
    }
}

//! Learned spectral quality scoring and adaptive-EQ mask optimization.
//!
//! The crate implements a deterministic audio pipeline:
//!
//! 1. [`dsp`] — STFT analysis/synthesis with retained phase, log-magnitude
//!    encoding, additive masking, and WAV/CSV/PGM I/O.
//! 2. [`synth`] — a two-timbre synthetic corpus generator producing paired
//!    "premium" vs. "cheap" clips that share note sequences and differ only
//!    in their time–frequency weighting.
//! 3. [`nn`] — a minimal dense tensor library with hand-written forward and
//!    reverse passes (conv, ReLU, maxpool, global average pool, dense,
//!    sigmoid, dropout) plus a finite-difference gradient checker.
//! 4. [`scorer`] — the convolutional quality scorer: architecture, training,
//!    evaluation, and versioned JSON serialization.
//! 5. [`maskopt`] — per-input additive mask optimization against the scorer
//!    under proximity and variance penalties, with block initialization and
//!    box smoothing to avoid noisy adversarial masks.
//! 6. [`saliency`] — class activation maps and input-gradient saliency.
//! 7. [`align`] — dynamic time warping alignment and spectral distances.
//!
//! Numeric kernels are generic over the scalar type via [`num::Real`]
//! (implemented for `f32` and `f64`); the aliases at the crate root pin the
//! default double-precision pipeline used by the CLI.

pub mod align;
pub mod dsp;
pub mod grid;
pub mod maskopt;
pub mod nn;
pub mod num;
pub mod saliency;
pub mod scorer;
pub mod synth;

/// Default double-precision audio buffer.
pub type AudioBuffer = dsp::AudioBuffer<f64>;
/// Default double-precision spectrogram.
pub type Spectrogram = dsp::Spectrogram<f64>;
/// Default double-precision mask.
pub type Mask = dsp::Mask<f64>;
/// Default double-precision tensor.
pub type Tensor = nn::Tensor<f64>;
/// Default double-precision scorer model.
pub type ScorerModel = scorer::ScorerModel<f64>;
/// Default double-precision saliency map.
pub type SaliencyMap = saliency::SaliencyMap<f64>;
/// Default double-precision mask optimization result.
pub type MaskOptResult = maskopt::MaskOptResult<f64>;

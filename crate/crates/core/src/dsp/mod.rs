//! Audio ↔ time–frequency conversion with log-magnitude encoding, retained
//! phase, and additive mask application.
//!
//! Analysis uses a periodic Hann window whose hop divides its length, so
//! weighted overlap-add (WOLA) synthesis with the same window reconstructs
//! interior samples exactly up to rounding. Magnitudes are stored as
//! `ln(|X| + ε)`; the inverse `exp(·) − ε` maps the floor back to an exact
//! zero via an explicit branch, so silent audio round-trips bit-exactly.

pub mod export;
pub mod wav;

use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

use crate::grid::Grid;
use crate::num::Real;

/// The only sample rate the pipeline operates at, in Hz.
pub const SAMPLE_RATE: u32 = 16000;

/// Mono audio at a known sample rate, amplitudes nominally in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T> AudioBuffer<T> {
    /// Buffer at the pipeline's fixed 16 kHz rate.
    pub fn at_pipeline_rate(samples: Vec<T>) -> Self {
        Self { samples, sample_rate: SAMPLE_RATE }
    }
}

/// Framing and encoding parameters for [`stft`]/[`istft`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    /// FFT length in samples; frames are zero-padded up to this.
    pub fft_size: usize,
    /// Analysis window length in samples (must not exceed `fft_size`).
    pub window_len: usize,
    /// Frame advance in samples (must divide `window_len` for exact WOLA).
    pub hop: usize,
    /// Additive magnitude floor inside the log encoding.
    pub log_epsilon: f64,
}

impl Default for StftConfig {
    /// 512-point FFT, 30 ms (480-sample) window, 10 ms (160-sample) hop.
    fn default() -> Self {
        Self { fft_size: 512, window_len: 480, hop: 160, log_epsilon: 1e-6 }
    }
}

impl StftConfig {
    /// Number of frequency bins per frame: `fft_size/2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of analysis frames for `n_samples` of audio, or `None` when
    /// the audio is shorter than one window.
    pub fn frames_for(&self, n_samples: usize) -> Option<usize> {
        if n_samples < self.window_len {
            None
        } else {
            Some((n_samples - self.window_len) / self.hop + 1)
        }
    }

    /// `ln(log_epsilon)`: the lower bound of every log-magnitude value.
    pub fn ln_epsilon(&self) -> f64 {
        self.log_epsilon.ln()
    }
}

/// Log-magnitude + phase time–frequency representation of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    /// `ln(|X| + log_epsilon)`, frames as rows, bins as columns.
    pub log_mag: Grid<T>,
    /// Phase in radians, in (−π, π]; 0 by convention where the magnitude is 0.
    pub phase: Grid<T>,
    pub config: StftConfig,
    /// Original audio length in samples, restored by [`istft`].
    pub n_samples: usize,
}

/// Additive log-magnitude weighting grid, same shape as its target spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask<T> {
    pub values: Grid<T>,
}

impl<T: Real> Mask<T> {
    /// All-zero (identity) mask of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { values: Grid::new(rows, cols, T::zero()) }
    }
}

/// Errors from the time–frequency operations.
#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("sample rate mismatch: expected {SAMPLE_RATE} Hz, got {got} Hz")]
    SampleRateMismatch { got: u32 },
    #[error("audio too short: {got} samples, need at least {need} (one analysis window)")]
    TooShort { got: usize, need: usize },
    #[error("shape mismatch in {context}: expected {expected_rows}x{expected_cols}, got {got_rows}x{got_cols}")]
    ShapeMismatch {
        context: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

/// Periodic (DFT-even) Hann window of length `len`.
pub fn hann_window<T: Real>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| T::of(0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())))
        .collect()
}

/// Short-time Fourier transform with log-magnitude encoding.
///
/// Frame `f` covers samples `[f*hop, f*hop + window_len)`; there is no
/// centering pre-pad, and trailing samples that do not fill a window are
/// dropped. Output shape is `frames_for(n) × bins()`.
pub fn stft<T: Real + FftNum>(audio: &AudioBuffer<T>, config: &StftConfig) -> Result<Spectrogram<T>, DspError> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(DspError::SampleRateMismatch { got: audio.sample_rate });
    }
    let n = audio.samples.len();
    let frames = config
        .frames_for(n)
        .ok_or(DspError::TooShort { got: n, need: config.window_len })?;
    let bins = config.bins();
    let window: Vec<T> = hann_window(config.window_len);

    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(config.fft_size);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); config.fft_size];

    let eps = T::of(config.log_epsilon);
    let pi = T::of(std::f64::consts::PI);
    let mut log_mag = Grid::new(frames, bins, T::zero());
    let mut phase = Grid::new(frames, bins, T::zero());

    for f in 0..frames {
        let start = f * config.hop;
        for (i, w) in window.iter().enumerate() {
            buf[i] = Complex::new(audio.samples[start + i] * *w, T::zero());
        }
        for slot in buf.iter_mut().skip(config.window_len) {
            *slot = Complex::new(T::zero(), T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);

        let lm_row = log_mag.row_mut(f);
        for (k, lm) in lm_row.iter_mut().enumerate() {
            let mag = (buf[k].re * buf[k].re + buf[k].im * buf[k].im).sqrt();
            *lm = (mag + eps).ln();
        }
        let ph_row = phase.row_mut(f);
        for (k, ph) in ph_row.iter_mut().enumerate() {
            let mag = (buf[k].re * buf[k].re + buf[k].im * buf[k].im).sqrt();
            *ph = if mag == T::zero() {
                T::zero()
            } else {
                let p = buf[k].im.atan2(buf[k].re);
                // atan2 may return exactly −π; fold it to +π so phases stay in (−π, π].
                if p <= -pi {
                    pi
                } else {
                    p
                }
            };
        }
    }

    Ok(Spectrogram { log_mag, phase, config: *config, n_samples: n })
}

/// Inverse STFT via weighted overlap-add with the analysis window as the
/// synthesis window.
///
/// Magnitudes are recovered as `exp(log_mag) − ε`, with values at the floor
/// mapped to an exact zero. Each output sample is divided by the accumulated
/// sum of squared window values; positions where that sum is below 1e-12
/// (possible only off the covered range) are left at zero. The output is
/// truncated or zero-padded to the stored `n_samples`.
pub fn istft<T: Real + FftNum>(spec: &Spectrogram<T>) -> Result<AudioBuffer<T>, DspError> {
    if !spec.log_mag.same_shape(&spec.phase) {
        return Err(DspError::ShapeMismatch {
            context: "istft log_mag vs phase",
            expected_rows: spec.log_mag.rows(),
            expected_cols: spec.log_mag.cols(),
            got_rows: spec.phase.rows(),
            got_cols: spec.phase.cols(),
        });
    }
    let config = &spec.config;
    let bins = config.bins();
    if spec.log_mag.cols() != bins {
        return Err(DspError::ShapeMismatch {
            context: "istft bins vs config",
            expected_rows: spec.log_mag.rows(),
            expected_cols: bins,
            got_rows: spec.log_mag.rows(),
            got_cols: spec.log_mag.cols(),
        });
    }
    let frames = spec.log_mag.rows();
    let window: Vec<T> = hann_window(config.window_len);

    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(config.fft_size);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); config.fft_size];

    let covered = if frames == 0 { 0 } else { (frames - 1) * config.hop + config.window_len };
    let out_len = spec.n_samples.max(covered);
    let mut out = vec![T::zero(); out_len];
    let mut wsum = vec![T::zero(); out_len];

    let eps = T::of(config.log_epsilon);
    let ln_eps = T::of(config.ln_epsilon());
    let inv_n = T::of(1.0 / config.fft_size as f64);

    for f in 0..frames {
        let lm_row = spec.log_mag.row(f);
        let ph_row = spec.phase.row(f);
        for k in 0..bins {
            let mag = if lm_row[k] <= ln_eps { T::zero() } else { lm_row[k].exp() - eps };
            buf[k] = Complex::new(mag * ph_row[k].cos(), mag * ph_row[k].sin());
        }
        for k in bins..config.fft_size {
            buf[k] = buf[config.fft_size - k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);

        let start = f * config.hop;
        for (i, w) in window.iter().enumerate() {
            out[start + i] += buf[i].re * inv_n * *w;
            wsum[start + i] += *w * *w;
        }
    }

    let guard = T::of(1e-12);
    for (o, w) in out.iter_mut().zip(wsum.iter()) {
        if *w >= guard {
            *o = *o / *w;
        }
    }

    out.truncate(spec.n_samples);
    out.resize(spec.n_samples, T::zero());
    Ok(AudioBuffer { samples: out, sample_rate: SAMPLE_RATE })
}

/// Additive mask application: `log_mag + mask`, clamped below at `ln(ε)` so
/// the result stays invertible. Phase, config, and length are copied.
pub fn apply_mask<T: Real>(spec: &Spectrogram<T>, mask: &Mask<T>) -> Result<Spectrogram<T>, DspError> {
    if !spec.log_mag.same_shape(&mask.values) {
        return Err(DspError::ShapeMismatch {
            context: "apply_mask",
            expected_rows: spec.log_mag.rows(),
            expected_cols: spec.log_mag.cols(),
            got_rows: mask.values.rows(),
            got_cols: mask.values.cols(),
        });
    }
    let ln_eps = T::of(spec.config.ln_epsilon());
    let mut log_mag = spec.log_mag.clone();
    for (v, m) in log_mag.data_mut().iter_mut().zip(mask.values.data().iter()) {
        let sum = *v + *m;
        *v = if sum < ln_eps { ln_eps } else { sum };
    }
    Ok(Spectrogram { log_mag, phase: spec.phase.clone(), config: spec.config, n_samples: spec.n_samples })
}

//! Two-class synthetic instrument corpus: "premium" vs. "cheap" timbre.
//!
//! Both classes render the *same* note sequences through the same additive
//! synthesizer; only the timbre parameters differ (resonance shape, spectral
//! tilt, vibrato depth, attack, noise level, high-harmonic decay). The
//! classes therefore share spectral support and differ only in how
//! time–frequency energy is weighted — exactly the kind of difference an
//! additive spectrogram mask can repair, which is what the rest of the
//! pipeline is evaluated on.

pub mod dataset;

pub use dataset::{build_dataset, DatasetConfig, DatasetManifest, ManifestEntry, Split};

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{AudioBuffer, SAMPLE_RATE};
use crate::grid::Grid;
use crate::num::Real;

/// Class labels: the scorer is trained toward premium = 0, cheap = 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Premium,
    Cheap,
}

impl ClassLabel {
    /// Numeric label used in manifests and as the training target.
    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::Premium => 0,
            ClassLabel::Cheap => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ClassLabel::Premium),
            1 => Some(ClassLabel::Cheap),
            _ => None,
        }
    }

    /// Short name used in generated file names.
    pub fn tag(self) -> &'static str {
        match self {
            ClassLabel::Premium => "premium",
            ClassLabel::Cheap => "cheap",
        }
    }
}

/// One Gaussian resonance bump in the spectral envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resonance {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub gain_db: f64,
}

/// Timbre parameters for one instrument class.
///
/// Premium and cheap share this functional form; only the values differ.
/// Invariants: `vibrato_depth ∈ [0, 0.03]`, all gains finite.
#[derive(Clone, Debug, PartialEq)]
pub struct TimbreProfile {
    pub label: ClassLabel,
    pub resonances: Vec<Resonance>,
    /// Broadband slope applied relative to 65 Hz.
    pub spectral_tilt_db_per_octave: f64,
    pub vibrato_rate_hz: f64,
    /// Fractional f0 deviation of the vibrato.
    pub vibrato_depth: f64,
    /// Linear attack ramp length.
    pub attack_s: f64,
    /// Broadband noise level relative to the harmonic RMS of each note.
    pub noise_gain: f64,
    /// Extra amplitude decay, in dB per second, applied to harmonics above
    /// the sixth; models dull high-partial sustain.
    pub high_harmonic_decay_db_per_s: f64,
}

impl TimbreProfile {
    /// Linear gain of the spectral envelope at `f_hz`: the tilt (in octaves
    /// above 65 Hz) plus every resonance bump, all in dB. Frequencies below
    /// 20 Hz or at/above 7800 Hz get zero gain (no DC rumble, no content
    /// near Nyquist).
    pub fn envelope_gain(&self, f_hz: f64) -> f64 {
        if !(20.0..7800.0).contains(&f_hz) {
            return 0.0;
        }
        let mut db = self.spectral_tilt_db_per_octave * (f_hz / 65.0).log2();
        for r in &self.resonances {
            let half = r.bandwidth_hz / 2.0;
            let z = (f_hz - r.center_hz) / half;
            db += r.gain_db * (-0.5 * z * z).exp();
        }
        10f64.powf(db / 20.0)
    }
}

/// Reference "good" timbre: broad smooth resonances, gentle tilt, strong
/// vibrato, slow attack, little noise.
pub fn premium_profile() -> TimbreProfile {
    TimbreProfile {
        label: ClassLabel::Premium,
        resonances: vec![
            Resonance { center_hz: 300.0, bandwidth_hz: 150.0, gain_db: 6.0 },
            Resonance { center_hz: 700.0, bandwidth_hz: 250.0, gain_db: 4.0 },
        ],
        spectral_tilt_db_per_octave: -3.0,
        vibrato_rate_hz: 5.5,
        vibrato_depth: 0.015,
        attack_s: 0.060,
        noise_gain: 0.02,
        high_harmonic_decay_db_per_s: 0.0,
    }
}

/// Reference "bad" timbre: narrow harsh peaks, steep tilt, shallow vibrato,
/// abrupt attack, prominent buzz, dull high partials.
pub fn cheap_profile() -> TimbreProfile {
    TimbreProfile {
        label: ClassLabel::Cheap,
        resonances: vec![
            Resonance { center_hz: 450.0, bandwidth_hz: 60.0, gain_db: 8.0 },
            Resonance { center_hz: 1800.0, bandwidth_hz: 80.0, gain_db: 6.0 },
        ],
        spectral_tilt_db_per_octave: -8.0,
        vibrato_rate_hz: 5.5,
        vibrato_depth: 0.004,
        attack_s: 0.015,
        noise_gain: 0.08,
        high_harmonic_decay_db_per_s: 12.0,
    }
}

/// One note in a rendered clip. The sequence is drawn from the clip seed
/// *before* any timbre parameter is consulted, so paired premium/cheap clips
/// share their notes exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoteSpec {
    pub onset_s: f64,
    pub duration_s: f64,
    pub f0_hz: f64,
    pub has_vibrato: bool,
}

impl NoteSpec {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

/// Errors from clip rendering and dataset building.
#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("clip duration {got} s is outside the supported range [1, 30] s")]
    InvalidDuration { got: f64 },
    #[error("dataset needs at least 20 sequences, got {got}")]
    TooFewSequences { got: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} is malformed: {detail}")]
    MalformedManifest { path: PathBuf, detail: String },
}

const MIN_NOTE_S: f64 = 0.25;
const MAX_NOTE_S: f64 = 1.0;
const MIN_GAP_S: f64 = 0.03;
const MAX_GAP_S: f64 = 0.08;
/// Worst-case time one future note needs (max gap + minimum duration);
/// reserving this per remaining note keeps every draw feasible.
const NOTE_BUDGET_S: f64 = MAX_GAP_S + MIN_NOTE_S;
const VIBRATO_MIN_NOTE_S: f64 = 0.5;
const VIBRATO_PROB: f64 = 0.7;
const RELEASE_S: f64 = 0.02;
const MAX_HARMONIC: usize = 16;
/// Seed-stream tag separating note-noise draws from sequence draws.
const NOISE_STREAM_TAG: u64 = 0x6e6f_6973_6500_0000; // "noise"

fn draw_sequence(rng: &mut ChaCha8Rng, duration_s: f64) -> Vec<NoteSpec> {
    // Cap the note count by what provably fits; at the standard 3 s this is
    // the full 4–8 range.
    let n_hi = (((duration_s + MAX_GAP_S) / NOTE_BUDGET_S).floor() as usize).clamp(1, 8);
    let n_lo = n_hi.min(4);
    let n = rng.random_range(n_lo..=n_hi);
    let mut notes = Vec::with_capacity(n);
    let mut t = 0.0;
    for i in 0..n {
        if i > 0 {
            t += rng.random_range(MIN_GAP_S..MAX_GAP_S);
        }
        let remaining_notes = (n - 1 - i) as f64;
        let max_d = (duration_s - t - remaining_notes * NOTE_BUDGET_S).min(MAX_NOTE_S);
        let d = if max_d > MIN_NOTE_S { rng.random_range(MIN_NOTE_S..max_d) } else { MIN_NOTE_S };
        let f0 = rng.random_range(65.0..262.0);
        let has_vibrato = d >= VIBRATO_MIN_NOTE_S && rng.random_bool(VIBRATO_PROB);
        notes.push(NoteSpec { onset_s: t, duration_s: d, f0_hz: f0, has_vibrato });
        t += d;
    }
    notes
}

/// Draw the note sequence for a clip seed. For clips of 2 s or longer the
/// sequence is redrawn until it contains at least one vibrato note and one
/// steady note (so vibrato/steady comparisons are defined for every clip);
/// shorter clips take the first draw.
pub fn note_sequence(seed: u64, duration_s: f64) -> Vec<NoteSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut notes = draw_sequence(&mut rng, duration_s);
    if duration_s >= 2.0 {
        for _ in 0..64 {
            let has_vib = notes.iter().any(|nt| nt.has_vibrato);
            let has_steady = notes.iter().any(|nt| !nt.has_vibrato);
            if has_vib && has_steady {
                return notes;
            }
            notes = draw_sequence(&mut rng, duration_s);
        }
        // Statistically unreachable; force the property rather than loop.
        if !notes.iter().any(|nt| nt.has_vibrato) {
            let longest = (0..notes.len())
                .max_by(|&a, &b| notes[a].duration_s.total_cmp(&notes[b].duration_s))
                .expect("sequence is non-empty");
            notes[longest].has_vibrato = true;
        }
        if !notes.iter().any(|nt| !nt.has_vibrato) {
            let shortest = (0..notes.len())
                .min_by(|&a, &b| notes[a].duration_s.total_cmp(&notes[b].duration_s))
                .expect("sequence is non-empty");
            notes[shortest].has_vibrato = false;
        }
    }
    notes
}

/// Amplitude envelope of a note: linear attack, flat sustain, 20 ms linear
/// release, clamped to [0, 1].
fn amp_env(t: f64, note_dur: f64, attack_s: f64) -> f64 {
    let attack = if attack_s > 0.0 { (t / attack_s).min(1.0) } else { 1.0 };
    let release = ((note_dur - t) / RELEASE_S).min(1.0);
    attack.min(release).max(0.0)
}

/// Shape white noise by the profile's spectral envelope in the frequency
/// domain (magnitude-only filter, conjugate-symmetric, so the output is
/// real up to rounding).
fn shape_noise(white: &[f64], profile: &TimbreProfile) -> Vec<f64> {
    let n = white.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = white.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let df = SAMPLE_RATE as f64 / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *v *= profile.envelope_gain(bin as f64 * df);
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|v| v.re * scale).collect()
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Additively synthesize `notes` through `profile` into a clip of
/// `duration_s` seconds. `noise_seed` drives the per-note noise draws and is
/// independent of the profile, so paired clips share their noise base.
/// The result is peak-normalized to 0.7.
pub fn render_notes<T: Real>(
    profile: &TimbreProfile,
    notes: &[NoteSpec],
    duration_s: f64,
    noise_seed: u64,
) -> AudioBuffer<T> {
    debug_assert!((0.0..=0.03).contains(&profile.vibrato_depth), "vibrato_depth out of range");
    let sr = SAMPLE_RATE as f64;
    let n_samples = (duration_s * sr).round() as usize;
    let mut clip = vec![0.0f64; n_samples];

    let mut noise_seed_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let note_noise_seeds: Vec<u64> = notes.iter().map(|_| noise_seed_rng.next_u64()).collect();

    for (note, &nseed) in notes.iter().zip(&note_noise_seeds) {
        let start = (note.onset_s * sr).round() as usize;
        if start >= n_samples {
            continue;
        }
        let want = (note.duration_s * sr).round() as usize;
        let len = want.min(n_samples - start);
        if len == 0 {
            continue;
        }
        let note_dur = len as f64 / sr;
        let mut tone = vec![0.0f64; len];

        let depth = if note.has_vibrato { profile.vibrato_depth } else { 0.0 };
        let rate = profile.vibrato_rate_hz;
        for k in 1..=MAX_HARMONIC {
            let fk = k as f64 * note.f0_hz;
            if fk >= 7800.0 {
                break;
            }
            let base_amp = profile.envelope_gain(fk) / k as f64;
            if base_amp <= 0.0 {
                continue;
            }
            let decay = if k > 6 { profile.high_harmonic_decay_db_per_s } else { 0.0 };
            for (i, out) in tone.iter_mut().enumerate() {
                let t = i as f64 / sr;
                // Phase integral of f(t) = k·f0·(1 + depth·sin(2π·rate·t)).
                let phase = if depth > 0.0 {
                    2.0 * PI * (fk * t + fk * depth / (2.0 * PI * rate) * (1.0 - (2.0 * PI * rate * t).cos()))
                } else {
                    2.0 * PI * fk * t
                };
                let amp = if decay > 0.0 { base_amp * 10f64.powf(-decay * t / 20.0) } else { base_amp };
                *out += amp * phase.sin();
            }
        }

        for (i, v) in tone.iter_mut().enumerate() {
            *v *= amp_env(i as f64 / sr, note_dur, profile.attack_s);
        }

        if profile.noise_gain > 0.0 {
            let mut nrng = ChaCha8Rng::seed_from_u64(nseed);
            let white: Vec<f64> = (0..len).map(|_| nrng.sample(StandardNormal)).collect();
            let shaped = shape_noise(&white, profile);
            let tone_rms = rms(&tone);
            let shaped_rms = rms(&shaped);
            if tone_rms > 0.0 && shaped_rms > 0.0 {
                let s = profile.noise_gain * tone_rms / shaped_rms;
                for (i, v) in tone.iter_mut().enumerate() {
                    *v += shaped[i] * s * amp_env(i as f64 / sr, note_dur, profile.attack_s);
                }
            }
        }

        for (i, v) in tone.iter().enumerate() {
            clip[start + i] += *v;
        }
    }

    let peak = clip.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let s = 0.7 / peak;
        for v in &mut clip {
            *v *= s;
        }
    }
    AudioBuffer::at_pipeline_rate(clip.into_iter().map(T::of).collect())
}

/// Render a full clip: the note sequence is drawn from `seed`, synthesized
/// through `profile`, and peak-normalized to 0.7. Deterministic for
/// `(seed, profile, duration_s)`; the note sequence and the noise base
/// depend only on the seed, so premium/cheap renders of the same seed are
/// the same performance on two instruments.
pub fn render_clip<T: Real>(
    seed: u64,
    profile: &TimbreProfile,
    duration_s: f64,
) -> Result<AudioBuffer<T>, SynthError> {
    if !duration_s.is_finite() || !(1.0..=30.0).contains(&duration_s) {
        return Err(SynthError::InvalidDuration { got: duration_s });
    }
    let notes = note_sequence(seed, duration_s);
    Ok(render_notes(profile, &notes, duration_s, seed ^ NOISE_STREAM_TAG))
}

/// Pearson correlation of the binarized spectral supports of two
/// log-magnitude grids (`1` where the value exceeds `threshold`). Returns
/// 1.0 when both supports are constant and equal, 0.0 when constant and
/// different.
pub fn support_correlation<T: Real>(a: &Grid<T>, b: &Grid<T>, threshold: f64) -> f64 {
    assert!(a.same_shape(b), "support grids must have the same shape");
    let n = a.len() as f64;
    let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let xa = if x.as_f64() > threshold { 1.0 } else { 0.0 };
        let yb = if y.as_f64() > threshold { 1.0 } else { 0.0 };
        sa += xa;
        sb += yb;
        sab += xa * yb;
    }
    let ma = sa / n;
    let mb = sb / n;
    let va = ma * (1.0 - ma);
    let vb = mb * (1.0 - mb);
    if va <= 0.0 || vb <= 0.0 {
        return if (ma - mb).abs() < f64::EPSILON { 1.0 } else { 0.0 };
    }
    (sab / n - ma * mb) / (va * vb).sqrt()
}

//! The learned quality scorer: a small convolutional network mapping a
//! log-magnitude spectrogram to a score in (0,1), with 0 meaning premium
//! timbre and 1 meaning cheap timbre.
//!
//! The architecture is deliberately shallow and ends in global average
//! pooling plus a single dense unit, which keeps the parameter count tiny
//! and makes class activation maps exact (see the saliency module). The
//! scorer doubles as the loss function that mask optimization descends, so
//! its input gradient path matters as much as its accuracy.

pub mod model_io;

pub use model_io::{load_model, save_model};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::wav::{read_wav, WavError};
use crate::dsp::{stft, AudioBuffer, DspError, Spectrogram, StftConfig};
use crate::grid::Grid;
use crate::nn::{self, backward, forward, Layer, Mode, NnError, Tensor};
use crate::num::Real;
use crate::synth::{ClassLabel, DatasetManifest, Split};

/// Training hyperparameters. Labels are fixed by convention: premium → 0.0,
/// cheap → 1.0.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clips per SGD step; must be ≥ 1.
    pub batch_size: usize,
    /// Must be > 0.
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 8, learning_rate: 0.01, dropout_rate: 0.3, seed: 42 }
    }
}

/// Metrics recorded by [`train`] and stored inside the model file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean squared error over the full train split, measured in eval mode
    /// after each epoch.
    pub epoch_mean_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub train_mse: f64,
    pub test_accuracy: f64,
    pub test_mse: f64,
}

/// A scorer: the layer stack plus everything needed to reproduce its input
/// representation (STFT settings, expected shape, input normalizer).
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel<T> {
    pub stft_config: StftConfig,
    pub input_frames: usize,
    pub input_bins: usize,
    /// Scalar subtracted from every log-magnitude value before the network
    /// sees it (global mean of the train split).
    pub normalizer_mean: f64,
    pub layers: Vec<Layer<T>>,
    pub train_report: TrainReport,
}

/// Errors from scoring, training, evaluation, and model files.
#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("spectrogram shape {got_frames}x{got_bins} does not match model input {expected_frames}x{expected_bins}")]
    ShapeMismatch { expected_frames: usize, expected_bins: usize, got_frames: usize, got_bins: usize },
    #[error("the {split} split is empty")]
    EmptySplit { split: Split },
    #[error("non-finite training loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model file has bad magic {found:?}")]
    BadMagic { found: String },
    #[error("model file version {found} is unsupported (expected 1)")]
    VersionUnsupported { found: u64 },
    #[error("model payload is corrupt: {detail}")]
    CorruptPayload { detail: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn xavier_conv<T: Real>(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Layer<T> {
    let fan_in = (in_ch * 9) as f64;
    let fan_out = (out_ch * 9) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    Layer::Conv2d {
        in_ch,
        out_ch,
        weights: (0..out_ch * in_ch * 9).map(|_| T::of(rng.random_range(-limit..limit))).collect(),
        biases: vec![T::zero(); out_ch],
    }
}

fn xavier_dense<T: Real>(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Layer<T> {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    Layer::Dense {
        in_dim,
        out_dim,
        weights: (0..in_dim * out_dim).map(|_| T::of(rng.random_range(-limit..limit))).collect(),
        biases: vec![T::zero(); out_dim],
    }
}

impl<T: Real> ScorerModel<T> {
    /// Freshly initialized model for the given input grid: Xavier-uniform
    /// weights drawn from `weight_seed`, zero biases, zero normalizer, empty
    /// report.
    ///
    /// Architecture: conv3×3×8 → ReLU → pool → dropout → conv3×3×16 → ReLU
    /// → pool → dropout → conv3×3×32 → ReLU → GAP → dense(32→1) → sigmoid.
    pub fn init(input_frames: usize, input_bins: usize, dropout_rate: f64, weight_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(weight_seed);
        let layers = vec![
            xavier_conv(1, 8, &mut rng),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Dropout { rate: dropout_rate },
            xavier_conv(8, 16, &mut rng),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Dropout { rate: dropout_rate },
            xavier_conv(16, 32, &mut rng),
            Layer::Relu,
            Layer::GlobalAvgPool,
            xavier_dense(32, 1, &mut rng),
            Layer::Sigmoid,
        ];
        Self {
            stft_config: StftConfig::default(),
            input_frames,
            input_bins,
            normalizer_mean: 0.0,
            layers,
            train_report: TrainReport::default(),
        }
    }

    /// Normalized network input for a log-magnitude grid of the model's
    /// shape: a 1×frames×bins tensor with the stored mean subtracted.
    pub fn to_input_tensor(&self, log_mag: &Grid<T>) -> Tensor<T> {
        let mean = T::of(self.normalizer_mean);
        let data: Vec<T> = log_mag.data().iter().map(|v| *v - mean).collect();
        Tensor::from_vec(vec![1, log_mag.rows(), log_mag.cols()], data)
    }

    fn check_shape(&self, log_mag: &Grid<T>) -> Result<(), ScorerError> {
        if log_mag.rows() != self.input_frames || log_mag.cols() != self.input_bins {
            return Err(ScorerError::ShapeMismatch {
                expected_frames: self.input_frames,
                expected_bins: self.input_bins,
                got_frames: log_mag.rows(),
                got_bins: log_mag.cols(),
            });
        }
        Ok(())
    }
}

/// Binary decision for a score: strictly above 0.5 is cheap, everything
/// else (including exactly 0.5) is premium.
pub fn classify<T: Real>(score: T) -> ClassLabel {
    if score.as_f64() > 0.5 {
        ClassLabel::Cheap
    } else {
        ClassLabel::Premium
    }
}

/// Score one spectrogram in eval mode (dropout off). Lower is more premium.
pub fn score<T: Real>(model: &ScorerModel<T>, spec: &Spectrogram<T>) -> Result<T, ScorerError> {
    model.check_shape(&spec.log_mag)?;
    let x = model.to_input_tensor(&spec.log_mag);
    let (out, _) = forward(&model.layers, &x, Mode::Eval)?;
    Ok(out.scalar())
}

fn wav_io_error(path: PathBuf, e: WavError) -> ScorerError {
    let source = match e {
        WavError::Io(io) => io,
        other => std::io::Error::other(other),
    };
    ScorerError::Io { path, source }
}

/// Load one split as (log-magnitude grid, label) pairs.
fn load_split_grids<T: Real + rustfft::FftNum>(
    stft_config: &StftConfig,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<(Grid<T>, ClassLabel)>, ScorerError> {
    let mut out = Vec::new();
    for entry in manifest.split_entries(split) {
        let path = manifest.resolve(entry);
        let audio: AudioBuffer<T> = read_wav(&path).map_err(|e| wav_io_error(path.clone(), e))?;
        let spec = stft(&audio, stft_config)?;
        out.push((spec.log_mag, entry.label));
    }
    if out.is_empty() {
        return Err(ScorerError::EmptySplit { split });
    }
    Ok(out)
}

/// Accuracy and MSE of a layer stack over in-memory normalized tensors.
fn metrics<T: Real>(layers: &[Layer<T>], tensors: &[Tensor<T>], labels: &[T]) -> Result<(f64, f64), NnError> {
    let mut correct = 0usize;
    let mut mse = 0.0f64;
    for (x, y) in tensors.iter().zip(labels.iter()) {
        let (out, _) = forward(layers, x, Mode::Eval)?;
        let s = out.scalar();
        let predicted_cheap = s.as_f64() > 0.5;
        let is_cheap = y.as_f64() == 1.0;
        if predicted_cheap == is_cheap {
            correct += 1;
        }
        let d = s.as_f64() - y.as_f64();
        mse += d * d;
    }
    let n = tensors.len() as f64;
    Ok((correct as f64 / n, mse / n))
}

/// Train a scorer on the manifest's train split with plain minibatch SGD on
/// the squared error against {0,1} labels; deterministic given the config.
///
/// The held-out (test split) accuracy and MSE land in the returned model's
/// `train_report`, along with the post-epoch train loss trajectory.
pub fn train<T: Real + rustfft::FftNum>(
    config: &TrainConfig,
    manifest: &DatasetManifest,
) -> Result<ScorerModel<T>, ScorerError> {
    assert!(config.learning_rate > 0.0, "learning rate must be positive");
    assert!(config.batch_size >= 1, "batch size must be at least 1");

    let stft_config = StftConfig::default();
    let train_grids = load_split_grids::<T>(&stft_config, manifest, Split::Train)?;
    let test_grids = load_split_grids::<T>(&stft_config, manifest, Split::Test)?;

    let frames = train_grids[0].0.rows();
    let bins = train_grids[0].0.cols();
    for (g, _) in train_grids.iter().chain(test_grids.iter()) {
        if g.rows() != frames || g.cols() != bins {
            return Err(ScorerError::ShapeMismatch {
                expected_frames: frames,
                expected_bins: bins,
                got_frames: g.rows(),
                got_bins: g.cols(),
            });
        }
    }

    // Global scalar mean over every train-split log-magnitude value.
    let normalizer_mean = {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (g, _) in &train_grids {
            sum += g.mean() * g.len() as f64;
            count += g.len();
        }
        sum / count as f64
    };

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let weight_seed = master.next_u64();
    let shuffle_seed = master.next_u64();
    let dropout_seed = master.next_u64();

    let mut model = ScorerModel::<T>::init(frames, bins, config.dropout_rate, weight_seed);
    model.normalizer_mean = normalizer_mean;

    let to_pairs = |grids: Vec<(Grid<T>, ClassLabel)>| -> (Vec<Tensor<T>>, Vec<T>) {
        let mut tensors = Vec::with_capacity(grids.len());
        let mut labels = Vec::with_capacity(grids.len());
        for (g, label) in grids {
            tensors.push(model.to_input_tensor(&g));
            labels.push(T::of(label.as_u8() as f64));
        }
        (tensors, labels)
    };
    let (train_x, train_y) = to_pairs(train_grids);
    let (test_x, test_y) = to_pairs(test_grids);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = nn::zero_param_grads(&model.layers);
            let inv_b = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let mode = Mode::Train { dropout_seed: dropout_rng.next_u64() };
                let (out, cache) = forward(&model.layers, &train_x[i], mode)?;
                let diff = out.scalar() - train_y[i];
                batch_loss += diff.as_f64() * diff.as_f64() * inv_b;
                let upstream = Tensor::from_vec(vec![1], vec![diff * T::of(2.0 * inv_b)]);
                let (g, _) = backward(&model.layers, &cache, &upstream)?;
                nn::add_param_grads(&mut grads, &g);
            }
            if !batch_loss.is_finite() {
                return Err(ScorerError::NonFiniteLoss { epoch, batch: batch_no });
            }
            nn::sgd_step(&mut model.layers, &grads, T::of(config.learning_rate));
        }
        let (_, train_loss) = metrics(&model.layers, &train_x, &train_y)?;
        epoch_mean_loss.push(train_loss);
    }

    let (train_accuracy, train_mse) = metrics(&model.layers, &train_x, &train_y)?;
    let (test_accuracy, test_mse) = metrics(&model.layers, &test_x, &test_y)?;
    model.train_report = TrainReport { epoch_mean_loss, train_accuracy, train_mse, test_accuracy, test_mse };
    Ok(model)
}

/// Accuracy (score > 0.5 ⇔ cheap) and MSE of a model over one split of a
/// corpus on disk.
pub fn evaluate<T: Real + rustfft::FftNum>(
    model: &ScorerModel<T>,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<(f64, f64), ScorerError> {
    let grids = load_split_grids::<T>(&model.stft_config, manifest, split)?;
    let mut tensors = Vec::with_capacity(grids.len());
    let mut labels = Vec::with_capacity(grids.len());
    for (g, label) in grids {
        model.check_shape(&g)?;
        tensors.push(model.to_input_tensor(&g));
        labels.push(T::of(label.as_u8() as f64));
    }
    Ok(metrics(&model.layers, &tensors, &labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Mask;
    use crate::synth::{cheap_profile, premium_profile, render_clip};
    use crate::testutil;

    fn spec_for(seed: u64, premium: bool) -> Spectrogram<f64> {
        let profile = if premium { premium_profile() } else { cheap_profile() };
        let audio: AudioBuffer<f64> = render_clip(seed, &profile, 3.0).unwrap();
        stft(&audio, &StftConfig::default()).unwrap()
    }

    fn zero_weight_model(frames: usize, bins: usize) -> ScorerModel<f64> {
        let mut model = ScorerModel::<f64>::init(frames, bins, 0.3, 0);
        for layer in &mut model.layers {
            if let Layer::Conv2d { weights, biases, .. } | Layer::Dense { weights, biases, .. } = layer {
                weights.iter_mut().for_each(|w| *w = 0.0);
                biases.iter_mut().for_each(|b| *b = 0.0);
            }
        }
        model
    }

    #[test]
    fn zero_weight_model_scores_exactly_one_half() {
        let spec = spec_for(1, true);
        let model = zero_weight_model(spec.log_mag.rows(), spec.log_mag.cols());
        assert_eq!(score(&model, &spec).unwrap(), 0.5);
    }

    #[test]
    fn scoring_is_deterministic() {
        let spec = spec_for(2, false);
        let model = ScorerModel::<f64>::init(spec.log_mag.rows(), spec.log_mag.cols(), 0.3, 7);
        let a = score(&model, &spec).unwrap();
        let b = score(&model, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let spec = spec_for(3, true);
        let model = ScorerModel::<f64>::init(spec.log_mag.rows() + 1, spec.log_mag.cols(), 0.3, 7);
        assert!(matches!(score(&model, &spec), Err(ScorerError::ShapeMismatch { .. })));
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let a = ScorerModel::<f64>::init(298, 257, 0.3, 5);
        let b = ScorerModel::<f64>::init(298, 257, 0.3, 5);
        let c = ScorerModel::<f64>::init(298, 257, 0.3, 6);
        assert_eq!(a.layers, b.layers);
        assert_ne!(a.layers, c.layers);
    }

    #[test]
    fn classify_puts_the_tie_on_the_premium_side() {
        assert_eq!(classify(0.5f64), ClassLabel::Premium);
        assert_eq!(classify(0.500001f64), ClassLabel::Cheap);
        assert_eq!(classify(0.1f64), ClassLabel::Premium);
    }

    #[test]
    fn untrained_model_behaves_like_a_coin_on_the_test_split() {
        let (_dir, manifest) = testutil::corpus();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let model = train::<f64>(&cfg, manifest).unwrap();
        assert!(model.train_report.epoch_mean_loss.is_empty());
        let (acc, mse) = evaluate(&model, manifest, Split::Test).unwrap();
        assert!((0.35..=0.65).contains(&acc), "untrained accuracy {acc}");
        assert!(mse < 0.5, "untrained mse {mse}");
        assert_eq!(acc, model.train_report.test_accuracy);
    }

    #[test]
    fn short_training_is_deterministic_and_reduces_loss() {
        let (_dir, manifest) = testutil::corpus();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let a = train::<f64>(&cfg, manifest).unwrap();
        let b = train::<f64>(&cfg, manifest).unwrap();
        assert_eq!(a.layers, b.layers, "training is not deterministic");
        assert_eq!(a.train_report, b.train_report);
        let losses = &a.train_report.epoch_mean_loss;
        assert_eq!(losses.len(), 3);
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "loss did not improve: {losses:?}"
        );
    }

    #[test]
    fn evaluate_honours_the_tie_convention() {
        let (_dir, manifest) = testutil::corpus();
        let spec = spec_for(1, true);
        let model = zero_weight_model(spec.log_mag.rows(), spec.log_mag.cols());
        // Constant 0.5 predicts premium everywhere: accuracy = premium share.
        let (acc, mse) = evaluate(&model, manifest, Split::Test).unwrap();
        assert_eq!(acc, 0.5);
        assert!((mse - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_split_is_reported() {
        let (_dir, manifest) = testutil::corpus();
        let mut train_only = manifest.clone();
        train_only.entries.retain(|e| e.split == Split::Train);
        let err = train::<f64>(&TrainConfig { epochs: 0, ..Default::default() }, &train_only).unwrap_err();
        assert!(matches!(err, ScorerError::EmptySplit { split: Split::Test }));
        let err = evaluate(&ScorerModel::<f64>::init(298, 257, 0.3, 0), &train_only, Split::Test).unwrap_err();
        assert!(matches!(err, ScorerError::EmptySplit { split: Split::Test }));
    }

    #[test]
    fn scores_move_when_the_input_moves() {
        // The scorer must react to its input for mask optimization to work:
        // a random-init model, same clip, one with a big constant mask.
        let spec = spec_for(9, false);
        let model = ScorerModel::<f64>::init(spec.log_mag.rows(), spec.log_mag.cols(), 0.3, 11);
        let base = score(&model, &spec).unwrap();
        let mask = Mask { values: Grid::new(spec.log_mag.rows(), spec.log_mag.cols(), 2.0f64) };
        let shifted = crate::dsp::apply_mask(&spec, &mask).unwrap();
        let moved = score(&model, &shifted).unwrap();
        assert_ne!(base, moved);
    }
}

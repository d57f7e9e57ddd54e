//! Finite-difference gradient verification with kink skipping.
//!
//! Central differences `(f(x+h·eᵢ) − f(x−h·eᵢ))/2h` are compared against an
//! analytic gradient coordinate by coordinate. Piecewise-linear units (ReLU,
//! max-pooling) make the loss non-differentiable on a measure-zero set, and
//! near such a point the two-sided difference straddles the kink and is
//! meaningless; the evaluation closure therefore reports a *kink margin*
//! (how far the evaluation stayed from the nearest kink) and coordinates
//! whose perturbed evaluations come too close to a kink are skipped rather
//! than failed. Checks run in `f64` — the step sizes involved are far below
//! single-precision resolution.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, forward_with_margin, Layer, Mode, Tensor};

/// Settings for one gradient check.
#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    /// Central-difference step `h`.
    pub step: f64,
    /// Maximum relative error accepted per coordinate.
    pub tolerance: f64,
    /// Skip a coordinate when either perturbed evaluation reports a kink
    /// margin below this.
    pub kink_margin: f64,
    /// Check at most this many coordinates (seeded sample); `0` checks all.
    pub max_coords: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-5, kink_margin: 1e-4, max_coords: 0 }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct CheckReport {
    /// Coordinates actually compared.
    pub checked: usize,
    /// Coordinates skipped for kink proximity.
    pub skipped: usize,
    /// Largest relative error among checked coordinates.
    pub max_rel_err: f64,
    /// Index of the worst coordinate, if any were checked.
    pub worst_coord: Option<usize>,
    /// Tolerance the check ran with.
    pub tolerance: f64,
}

impl CheckReport {
    /// True when at least one coordinate was compared and none exceeded the
    /// tolerance.
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= self.tolerance
    }
}

/// Relative error with an absolute floor: differences between two values
/// that are both below 1e-8 in magnitude count as zero error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Core checker over an arbitrary scalar function.
///
/// `eval` maps a point to `(value, kink_margin)`; `analytic` is the gradient
/// claimed at `point`. Coordinates are visited in a seeded order when
/// sampling is enabled, so reports are reproducible.
pub fn check_gradient_fn<F>(
    mut eval: F,
    point: &[f64],
    analytic: &[f64],
    cfg: &CheckConfig,
    seed: u64,
) -> CheckReport
where
    F: FnMut(&[f64]) -> (f64, f64),
{
    assert_eq!(point.len(), analytic.len(), "analytic gradient must match the point dimension");
    let indices: Vec<usize> = if cfg.max_coords > 0 && point.len() > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, point.len(), cfg.max_coords).into_iter().collect()
    } else {
        (0..point.len()).collect()
    };

    let mut buf = point.to_vec();
    let mut report = CheckReport { checked: 0, skipped: 0, max_rel_err: 0.0, worst_coord: None, tolerance: cfg.tolerance };
    for i in indices {
        buf[i] = point[i] + cfg.step;
        let (f_plus, m_plus) = eval(&buf);
        buf[i] = point[i] - cfg.step;
        let (f_minus, m_minus) = eval(&buf);
        buf[i] = point[i];
        if m_plus < cfg.kink_margin || m_minus < cfg.kink_margin {
            report.skipped += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * cfg.step);
        let err = rel_err(analytic[i], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_coord = Some(i);
        }
        report.checked += 1;
    }
    report
}

/// Seeded projection loss `loss(out) = Σ pⱼ·outⱼ` with p ~ U(−1,1); turns a
/// tensor-valued network into the scalar function the checker needs while
/// exercising every output coordinate.
fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Check `∂loss/∂input` of a layer stack against central differences, where
/// `loss` is a seeded projection of the network output.
pub fn check_input_gradient(
    layers: &[Layer<f64>],
    input: &Tensor<f64>,
    mode: Mode,
    cfg: &CheckConfig,
    seed: u64,
) -> CheckReport {
    let (out, cache) = forward(layers, input, mode).expect("forward failed");
    let proj = projection(out.len(), seed);
    let upstream = Tensor::from_vec(out.shape().to_vec(), proj.clone());
    let (_, gin) = backward(layers, &cache, &upstream).expect("backward failed");

    let shape = input.shape().to_vec();
    let eval = |point: &[f64]| {
        let x = Tensor::from_vec(shape.clone(), point.to_vec());
        let (out, _, margin) = forward_with_margin(layers, &x, mode).expect("forward failed");
        let loss: f64 = out.data().iter().zip(proj.iter()).map(|(o, p)| o * p).sum();
        (loss, margin)
    };
    check_gradient_fn(eval, input.data(), gin.data(), cfg, seed)
}

/// Flatten every layer's parameters (weights then biases, in layer order).
pub fn flatten_params(layers: &[Layer<f64>]) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in layers {
        if let Layer::Conv2d { weights, biases, .. } | Layer::Dense { weights, biases, .. } = layer {
            flat.extend_from_slice(weights);
            flat.extend_from_slice(biases);
        }
    }
    flat
}

/// Write a flat parameter vector (as produced by [`flatten_params`]) back
/// into the layer stack. Panics if the length does not match.
pub fn set_params(layers: &mut [Layer<f64>], flat: &[f64]) {
    let mut pos = 0;
    for layer in layers.iter_mut() {
        if let Layer::Conv2d { weights, biases, .. } | Layer::Dense { weights, biases, .. } = layer {
            weights.copy_from_slice(&flat[pos..pos + weights.len()]);
            pos += weights.len();
            biases.copy_from_slice(&flat[pos..pos + biases.len()]);
            pos += biases.len();
        }
    }
    assert_eq!(pos, flat.len(), "parameter vector length must match the stack");
}

/// Check `∂loss/∂parameters` of a layer stack against central differences,
/// where `loss` is a seeded projection of the network output.
pub fn check_param_gradients(
    layers: &[Layer<f64>],
    input: &Tensor<f64>,
    mode: Mode,
    cfg: &CheckConfig,
    seed: u64,
) -> CheckReport {
    let (out, cache) = forward(layers, input, mode).expect("forward failed");
    let proj = projection(out.len(), seed);
    let upstream = Tensor::from_vec(out.shape().to_vec(), proj.clone());
    let (grads, _) = backward(layers, &cache, &upstream).expect("backward failed");
    let mut analytic = Vec::new();
    for g in &grads {
        analytic.extend_from_slice(&g.weights);
        analytic.extend_from_slice(&g.biases);
    }

    let point = flatten_params(layers);
    let mut work = layers.to_vec();
    let eval = |p: &[f64]| {
        set_params(&mut work, p);
        let (out, _, margin) = forward_with_margin(&work, input, mode).expect("forward failed");
        let loss: f64 = out.data().iter().zip(proj.iter()).map(|(o, p)| o * p).sum();
        (loss, margin)
    };
    check_gradient_fn(eval, &point, &analytic, cfg, seed)
}

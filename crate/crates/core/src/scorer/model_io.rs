//! Versioned model files: UTF-8 JSON with floats printed at 17 significant
//! digits so every `f64` round-trips bit-exactly.
//!
//! Layout: `{magic:"neqm", version:1, stft_config, input_frames, input_bins,
//! normalizer_mean, layers:[{kind, shape?, weights?, biases?, rate?}],
//! train_report}`. Object keys are emitted in sorted order, so saving the
//! same model twice produces identical bytes.

use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{json, Map, Value};

use crate::dsp::StftConfig;
use crate::nn::Layer;
use crate::num::Real;

use super::{ScorerError, ScorerModel, TrainReport};

/// File-type tag; anything else is rejected as [`ScorerError::BadMagic`].
pub const MODEL_MAGIC: &str = "neqm";
/// Only format version this build reads and writes.
pub const MODEL_VERSION: u64 = 1;

/// Compact JSON with every float at 17 significant digits (`{:.16e}`),
/// enough to reconstruct the exact bit pattern of any finite `f64`.
struct PreciseFloats;

impl Formatter for PreciseFloats {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

fn float_array<T: Real>(values: &[T]) -> Value {
    Value::Array(values.iter().map(|v| json!(v.as_f64())).collect())
}

fn layer_value<T: Real>(layer: &Layer<T>) -> Value {
    match layer {
        Layer::Conv2d { in_ch, out_ch, weights, biases } => json!({
            "kind": "conv2d",
            "shape": [*out_ch, *in_ch, 3, 3],
            "weights": float_array(weights),
            "biases": float_array(biases),
        }),
        Layer::Dense { in_dim, out_dim, weights, biases } => json!({
            "kind": "dense",
            "shape": [*out_dim, *in_dim],
            "weights": float_array(weights),
            "biases": float_array(biases),
        }),
        Layer::Dropout { rate } => json!({ "kind": "dropout", "rate": *rate }),
        Layer::Relu => json!({ "kind": "relu" }),
        Layer::MaxPool2x2 => json!({ "kind": "maxpool2x2" }),
        Layer::GlobalAvgPool => json!({ "kind": "global_avg_pool" }),
        Layer::Sigmoid => json!({ "kind": "sigmoid" }),
    }
}

fn ensure_finite<T: Real>(layers: &[Layer<T>]) -> Result<(), ScorerError> {
    for (i, layer) in layers.iter().enumerate() {
        if let Layer::Conv2d { weights, biases, .. } | Layer::Dense { weights, biases, .. } = layer {
            if weights.iter().chain(biases.iter()).any(|v| !v.as_f64().is_finite()) {
                return Err(ScorerError::CorruptPayload {
                    detail: format!("layer {i} holds a non-finite parameter; refusing to serialize"),
                });
            }
        }
    }
    Ok(())
}

/// Write the model to `path` as versioned JSON; byte-deterministic.
pub fn save_model<T: Real>(model: &ScorerModel<T>, path: &Path) -> Result<(), ScorerError> {
    ensure_finite(&model.layers)?;
    if !model.normalizer_mean.is_finite() {
        return Err(ScorerError::CorruptPayload { detail: "non-finite normalizer mean".to_string() });
    }
    let report = &model.train_report;
    let value = json!({
        "magic": MODEL_MAGIC,
        "version": MODEL_VERSION,
        "stft_config": serde_json::to_value(model.stft_config)
            .expect("StftConfig serialization is infallible"),
        "input_frames": model.input_frames,
        "input_bins": model.input_bins,
        "normalizer_mean": model.normalizer_mean,
        "layers": Value::Array(model.layers.iter().map(layer_value).collect()),
        "train_report": {
            "epoch_mean_loss": report.epoch_mean_loss,
            "train_accuracy": report.train_accuracy,
            "train_mse": report.train_mse,
            "test_accuracy": report.test_accuracy,
            "test_mse": report.test_mse,
        },
    });

    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFloats);
    value.serialize(&mut ser).expect("serializing to a Vec cannot fail");
    buf.push(b'\n');
    fs::write(path, buf).map_err(|source| ScorerError::Io { path: path.to_path_buf(), source })
}

fn corrupt(detail: impl Into<String>) -> ScorerError {
    ScorerError::CorruptPayload { detail: detail.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, ScorerError> {
    obj.get(key).ok_or_else(|| corrupt(format!("missing field '{key}'")))
}

fn get_usize(obj: &Map<String, Value>, key: &str) -> Result<usize, ScorerError> {
    field(obj, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| corrupt(format!("field '{key}' is not an unsigned integer")))
}

fn get_f64(obj: &Map<String, Value>, key: &str) -> Result<f64, ScorerError> {
    field(obj, key)?.as_f64().ok_or_else(|| corrupt(format!("field '{key}' is not a number")))
}

fn float_vec<T: Real>(value: &Value, what: &str) -> Result<Vec<T>, ScorerError> {
    let arr = value.as_array().ok_or_else(|| corrupt(format!("{what} is not an array")))?;
    arr.iter()
        .map(|v| v.as_f64().map(T::of).ok_or_else(|| corrupt(format!("{what} holds a non-numeric entry"))))
        .collect()
}

fn parse_layer<T: Real>(index: usize, value: &Value) -> Result<Layer<T>, ScorerError> {
    let obj = value.as_object().ok_or_else(|| corrupt(format!("layer {index} is not an object")))?;
    let kind = field(obj, "kind")?.as_str().ok_or_else(|| corrupt(format!("layer {index} kind is not a string")))?;
    match kind {
        "conv2d" | "dense" => {
            let shape: Vec<usize> = field(obj, "shape")?
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as usize).collect())
                .ok_or_else(|| corrupt(format!("layer {index} shape is not an array")))?;
            let weights: Vec<T> = float_vec(field(obj, "weights")?, &format!("layer {index} weights"))?;
            let biases: Vec<T> = float_vec(field(obj, "biases")?, &format!("layer {index} biases"))?;
            if kind == "conv2d" {
                let (out_ch, in_ch) = match shape[..] {
                    [o, i, 3, 3] => (o, i),
                    _ => return Err(corrupt(format!("layer {index} conv2d shape {shape:?} is not [out,in,3,3]"))),
                };
                if weights.len() != out_ch * in_ch * 9 || biases.len() != out_ch {
                    return Err(corrupt(format!(
                        "layer {index} conv2d parameter lengths {}/{} do not match shape {shape:?}",
                        weights.len(),
                        biases.len()
                    )));
                }
                Ok(Layer::Conv2d { in_ch, out_ch, weights, biases })
            } else {
                let (out_dim, in_dim) = match shape[..] {
                    [o, i] => (o, i),
                    _ => return Err(corrupt(format!("layer {index} dense shape {shape:?} is not [out,in]"))),
                };
                if weights.len() != out_dim * in_dim || biases.len() != out_dim {
                    return Err(corrupt(format!(
                        "layer {index} dense parameter lengths {}/{} do not match shape {shape:?}",
                        weights.len(),
                        biases.len()
                    )));
                }
                Ok(Layer::Dense { in_dim, out_dim, weights, biases })
            }
        }
        "dropout" => {
            let rate = get_f64(obj, "rate")?;
            if !(0.0..1.0).contains(&rate) {
                return Err(corrupt(format!("layer {index} dropout rate {rate} is outside [0,1)")));
            }
            Ok(Layer::Dropout { rate })
        }
        "relu" => Ok(Layer::Relu),
        "maxpool2x2" => Ok(Layer::MaxPool2x2),
        "global_avg_pool" => Ok(Layer::GlobalAvgPool),
        "sigmoid" => Ok(Layer::Sigmoid),
        other => Err(corrupt(format!("layer {index} has unknown kind '{other}'"))),
    }
}

/// Read a model from a file written by [`save_model`].
pub fn load_model<T: Real>(path: &Path) -> Result<ScorerModel<T>, ScorerError> {
    let text =
        fs::read_to_string(path).map_err(|source| ScorerError::Io { path: path.to_path_buf(), source })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| corrupt(format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| corrupt("top level is not an object"))?;

    let magic = field(obj, "magic")?.as_str().ok_or_else(|| corrupt("magic is not a string"))?;
    if magic != MODEL_MAGIC {
        return Err(ScorerError::BadMagic { found: magic.to_string() });
    }
    let version = field(obj, "version")?.as_u64().ok_or_else(|| corrupt("version is not an integer"))?;
    if version != MODEL_VERSION {
        return Err(ScorerError::VersionUnsupported { found: version });
    }

    let stft_config: StftConfig = serde_json::from_value(field(obj, "stft_config")?.clone())
        .map_err(|e| corrupt(format!("bad stft_config: {e}")))?;
    let input_frames = get_usize(obj, "input_frames")?;
    let input_bins = get_usize(obj, "input_bins")?;
    let normalizer_mean = get_f64(obj, "normalizer_mean")?;
    if !normalizer_mean.is_finite() {
        return Err(corrupt("normalizer_mean is not finite"));
    }

    let layer_values = field(obj, "layers")?.as_array().ok_or_else(|| corrupt("layers is not an array"))?;
    let layers: Vec<Layer<T>> = layer_values
        .iter()
        .enumerate()
        .map(|(i, v)| parse_layer(i, v))
        .collect::<Result<_, _>>()?;

    let report_obj = field(obj, "train_report")?
        .as_object()
        .ok_or_else(|| corrupt("train_report is not an object"))?;
    let train_report = TrainReport {
        epoch_mean_loss: float_vec(field(report_obj, "epoch_mean_loss")?, "epoch_mean_loss")?,
        train_accuracy: get_f64(report_obj, "train_accuracy")?,
        train_mse: get_f64(report_obj, "train_mse")?,
        test_accuracy: get_f64(report_obj, "test_accuracy")?,
        test_mse: get_f64(report_obj, "test_mse")?,
    };

    Ok(ScorerModel { stft_config, input_frames, input_bins, normalizer_mean, layers, train_report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> ScorerModel<f64> {
        let mut model = ScorerModel::<f64>::init(12, 10, 0.3, 77);
        model.normalizer_mean = -9.871234567890123;
        model.train_report = TrainReport {
            epoch_mean_loss: vec![0.25, 0.19, 0.1 + 0.2],
            train_accuracy: 0.96875,
            train_mse: 0.031,
            test_accuracy: 0.9,
            test_mse: 0.07,
        };
        model
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = sample_model();
        save_model(&model, &path).unwrap();
        let loaded: ScorerModel<f64> = load_model(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn roundtrip_survives_awkward_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut model = sample_model();
        if let Layer::Conv2d { weights, .. } = &mut model.layers[0] {
            weights[0] = 0.1 + 0.2; // classic non-representable decimal
            weights[1] = 1e-300;
            weights[2] = -0.0;
            weights[3] = f64::MIN_POSITIVE;
            weights[4] = 5e-324; // smallest subnormal
            weights[5] = -1.7976931348623157e308; // most negative finite
        }
        save_model(&model, &path).unwrap();
        let loaded: ScorerModel<f64> = load_model(&path).unwrap();
        let (a, b) = match (&loaded.layers[0], &model.layers[0]) {
            (Layer::Conv2d { weights: a, .. }, Layer::Conv2d { weights: b, .. }) => (a, b),
            _ => unreachable!(),
        };
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{x} vs {y}");
        }
    }

    #[test]
    fn single_precision_models_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model32.json");
        let model = ScorerModel::<f32>::init(8, 6, 0.2, 3);
        save_model(&model, &path).unwrap();
        let loaded: ScorerModel<f32> = load_model(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let model = sample_model();
        save_model(&model, &a).unwrap();
        save_model(&model, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes.last(), Some(&b'\n'), "file should end with a newline");
        assert!(std::str::from_utf8(&bytes).is_ok());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&sample_model(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model::<f64>(&path), Err(ScorerError::CorruptPayload { .. })));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&sample_model(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"neqm\"", "\"zzzz\"");
        std::fs::write(&path, text).unwrap();
        match load_model::<f64>(&path) {
            Err(ScorerError::BadMagic { found }) => assert_eq!(found, "zzzz"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn future_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&sample_model(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":99");
        std::fs::write(&path, text).unwrap();
        match load_model::<f64>(&path) {
            Err(ScorerError::VersionUnsupported { found: 99 }) => {}
            other => panic!("expected VersionUnsupported, got {other:?}"),
        }
    }

    #[test]
    fn parameter_length_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&sample_model(), &path).unwrap();
        // Shrink the first conv's declared output channels without touching
        // its weight array.
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"shape\":[8,1,3,3]", "\"shape\":[7,1,3,3]", 1);
        std::fs::write(&path, text).unwrap();
        match load_model::<f64>(&path) {
            Err(ScorerError::CorruptPayload { detail }) => {
                assert!(detail.contains("layer 0"), "{detail}");
            }
            other => panic!("expected CorruptPayload, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_parameters_refuse_to_serialize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut model = sample_model();
        if let Layer::Conv2d { weights, .. } = &mut model.layers[0] {
            weights[0] = f64::NAN;
        }
        assert!(matches!(save_model(&model, &path), Err(ScorerError::CorruptPayload { .. })));
        assert!(!path.exists(), "no file should be written on failure");
    }
}

//! RIFF/WAVE reader and writer for the pipeline's fixed on-disk format:
//! PCM, 16-bit signed little-endian, mono, 16 kHz.
//!
//! The reader walks the chunk list, skips unknown chunks (honoring RIFF's
//! even-byte padding), and rejects any deviation from the fixed format with
//! a diagnostic naming the offending field.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AudioBuffer, SAMPLE_RATE};
use crate::num::Real;

/// Errors from WAV encoding/decoding.
#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed wav: {0}")]
    Malformed(String),
    #[error("unsupported wav {field}: expected {expected}, found {found}")]
    Unsupported { field: &'static str, expected: String, found: String },
}

/// Write mono 16-bit PCM at 16 kHz. Samples are scaled by 32767, rounded
/// half away from zero, and clamped to the i16 range.
pub fn write_wav<T: Real>(path: &Path, audio: &AudioBuffer<T>) -> Result<(), WavError> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(WavError::Unsupported {
            field: "sample_rate",
            expected: SAMPLE_RATE.to_string(),
            found: audio.sample_rate.to_string(),
        });
    }
    let data_len = audio.samples.len() * 2;
    let mut bytes = Vec::with_capacity(44 + data_len);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    bytes.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &audio.samples {
        let v = (s.as_f64() * 32767.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a WAV file, requiring PCM / mono / 16-bit / 16 kHz. Decoded samples
/// are `raw / 32768`.
pub fn read_wav<T: Real>(path: &Path) -> Result<AudioBuffer<T>, WavError> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

fn parse_wav<T: Real>(bytes: &[u8]) -> Result<AudioBuffer<T>, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::Malformed("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::Malformed("missing RIFF tag".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::Malformed("missing WAVE tag".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            WavError::Malformed(format!(
                "chunk {:?} overruns file (size {size})",
                String::from_utf8_lossy(id)
            ))
        })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(WavError::Malformed("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1); // chunks are padded to even sizes
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| WavError::Malformed("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(WavError::Unsupported { field: "audio_format", expected: "1 (PCM)".into(), found: format.to_string() });
    }
    if channels != 1 {
        return Err(WavError::Unsupported { field: "channels", expected: "1 (mono)".into(), found: channels.to_string() });
    }
    if rate != SAMPLE_RATE {
        return Err(WavError::Unsupported { field: "sample_rate", expected: SAMPLE_RATE.to_string(), found: rate.to_string() });
    }
    if bits != 16 {
        return Err(WavError::Unsupported { field: "bits_per_sample", expected: "16".into(), found: bits.to_string() });
    }
    let data = data.ok_or_else(|| WavError::Malformed("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(WavError::Malformed("data chunk has odd byte length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| T::of(i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0))
        .collect();
    Ok(AudioBuffer { samples, sample_rate: SAMPLE_RATE })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(samples: Vec<f64>) -> Vec<f64> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &AudioBuffer::at_pipeline_rate(samples)).unwrap();
        read_wav::<f64>(&path).unwrap().samples
    }

    #[test]
    fn round_trip_preserves_samples_within_quantization() {
        let samples: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.7).collect();
        let back = roundtrip(samples.clone());
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1.0 / 32767.0, "{a} vs {b}");
        }
    }

    #[test]
    fn clipping_values_saturate() {
        let back = roundtrip(vec![2.0, -2.0]);
        assert!((back[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(back[1], -1.0);
    }

    #[test]
    fn header_bytes_are_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.wav");
        write_wav(&path, &AudioBuffer::at_pipeline_rate(vec![0.0_f64; 4])).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 36 + 8);
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(&bytes[12..16], b"fmt ");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 16000);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(bytes.len(), 44 + 8);
    }

    #[test]
    fn rejects_stereo_naming_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        write_wav(&path, &AudioBuffer::at_pipeline_rate(vec![0.0_f64; 4])).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[22] = 2; // channel count low byte
        fs::write(&path, &bytes).unwrap();
        match read_wav::<f64>(&path) {
            Err(WavError::Unsupported { field: "channels", .. }) => {}
            other => panic!("expected channels error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_rate_format_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        write_wav(&path, &AudioBuffer::at_pipeline_rate(vec![0.0_f64; 4])).unwrap();
        let good = fs::read(&path).unwrap();

        let mut b = good.clone();
        b[24..28].copy_from_slice(&44100u32.to_le_bytes());
        fs::write(&path, &b).unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(WavError::Unsupported { field: "sample_rate", .. })));

        let mut b = good.clone();
        b[20..22].copy_from_slice(&3u16.to_le_bytes());
        fs::write(&path, &b).unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(WavError::Unsupported { field: "audio_format", .. })));

        let mut b = good.clone();
        b[34..36].copy_from_slice(&8u16.to_le_bytes());
        fs::write(&path, &b).unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(WavError::Unsupported { field: "bits_per_sample", .. })));
    }

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &AudioBuffer::at_pipeline_rate(vec![0.0_f64; 100])).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..50]).unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(WavError::Malformed(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        // RIFF file with a LIST chunk of odd size (exercises pad-byte skip)
        // placed before fmt/data.
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&0u32.to_le_bytes()); // patched below
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]); // 3 bytes + pad
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&1000i16.to_le_bytes());
        bytes.extend_from_slice(&(-1000i16).to_le_bytes());
        let total = bytes.len() as u32 - 8;
        bytes[4..8].copy_from_slice(&total.to_le_bytes());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.wav");
        fs::write(&path, &bytes).unwrap();
        let audio = read_wav::<f64>(&path).unwrap();
        assert_eq!(audio.samples.len(), 2);
        assert!((audio.samples[0] - 1000.0 / 32768.0).abs() < 1e-12);
    }
}

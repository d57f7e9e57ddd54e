//! Corpus building: paired premium/cheap renders of shared note sequences,
//! written as WAV files plus a CSV manifest.
//!
//! The train/test split is made *by sequence id*, not by clip, so the two
//! renders of one performance always land in the same split and a scorer
//! can never win by memorizing note sequences.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::wav::write_wav;
use crate::dsp::AudioBuffer;

use super::{cheap_profile, premium_profile, render_clip, ClassLabel, SynthError};

/// Which side of the train/test split an entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One clip in the corpus. `wav_path` is relative to the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub wav_path: String,
    pub label: ClassLabel,
    pub split: Split,
    pub clip_seed: u64,
    pub sequence_id: u32,
}

/// The corpus index: every rendered clip with its label, split, seed, and
/// sequence id.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: &str = "path,label,split,seed,sequence_id";
/// File name the manifest is written under inside the corpus directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

impl DatasetManifest {
    /// Absolute (root-joined) path of an entry's WAV file.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root_dir.join(&entry.wav_path)
    }

    /// Entries belonging to one side of the split.
    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Write the manifest as CSV (header row, one entry per line).
    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        let io_err = |source| SynthError::Io { path: path.to_path_buf(), source };
        let mut out = Vec::new();
        writeln!(out, "{MANIFEST_HEADER}").expect("write to Vec cannot fail");
        for e in &self.entries {
            writeln!(out, "{},{},{},{},{}", e.wav_path, e.label.as_u8(), e.split, e.clip_seed, e.sequence_id)
                .expect("write to Vec cannot fail");
        }
        fs::write(path, out).map_err(io_err)
    }

    /// Parse a manifest CSV; the containing directory becomes `root_dir`.
    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let bad = |detail: String| SynthError::MalformedManifest { path: path.to_path_buf(), detail };
        let text = fs::read_to_string(path)
            .map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        let mut lines = text.lines();
        match lines.next() {
            Some(MANIFEST_HEADER) => {}
            other => return Err(bad(format!("expected header '{MANIFEST_HEADER}', got {other:?}"))),
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row = i + 2; // 1-based, after the header
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("line {row}: expected 5 fields, got {}", fields.len())));
            }
            let label = fields[1]
                .parse::<u8>()
                .ok()
                .and_then(ClassLabel::from_u8)
                .ok_or_else(|| bad(format!("line {row}: bad label '{}'", fields[1])))?;
            let split = Split::parse(fields[2]).ok_or_else(|| bad(format!("line {row}: bad split '{}'", fields[2])))?;
            let clip_seed =
                fields[3].parse::<u64>().map_err(|_| bad(format!("line {row}: bad seed '{}'", fields[3])))?;
            let sequence_id =
                fields[4].parse::<u32>().map_err(|_| bad(format!("line {row}: bad sequence id '{}'", fields[4])))?;
            entries.push(ManifestEntry { wav_path: fields[0].to_string(), label, split, clip_seed, sequence_id });
        }
        let root_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(DatasetManifest { root_dir, entries })
    }
}

/// Settings for [`build_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    /// Master seed; per-sequence clip seeds are drawn from it.
    pub seed: u64,
    /// Number of note sequences; each yields one premium and one cheap clip.
    pub n_sequences: usize,
    pub clip_duration_s: f64,
    pub out_dir: PathBuf,
}

impl DatasetConfig {
    /// Standard corpus settings: 50 sequences of 3 s, seed 42.
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { seed: 42, n_sequences: 50, clip_duration_s: 3.0, out_dir: out_dir.into() }
    }
}

/// Render the full corpus: for every sequence id, both class clips from the
/// same note sequence, an 80/20 train/test split by sequence id, and a
/// manifest CSV in `out_dir`. Rebuilding with the same config is
/// byte-identical.
pub fn build_dataset(config: &DatasetConfig) -> Result<DatasetManifest, SynthError> {
    if config.n_sequences < 20 {
        return Err(SynthError::TooFewSequences { got: config.n_sequences });
    }
    fs::create_dir_all(&config.out_dir)
        .map_err(|source| SynthError::Io { path: config.out_dir.clone(), source })?;

    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clip_seeds: Vec<u64> = (0..config.n_sequences).map(|_| seed_rng.next_u64()).collect();
    let train_sequences = config.n_sequences * 4 / 5;
    let profiles = [premium_profile(), cheap_profile()];

    let mut entries = Vec::with_capacity(2 * config.n_sequences);
    for (seq_id, &clip_seed) in clip_seeds.iter().enumerate() {
        let split = if seq_id < train_sequences { Split::Train } else { Split::Test };
        for profile in &profiles {
            let audio: AudioBuffer<f64> = render_clip(clip_seed, profile, config.clip_duration_s)?;
            let wav_path = format!("seq{seq_id:03}_{}.wav", profile.label.tag());
            let full = config.out_dir.join(&wav_path);
            write_wav(&full, &audio).map_err(|e| SynthError::Io {
                path: full.clone(),
                source: match e {
                    crate::dsp::wav::WavError::Io(io) => io,
                    other => std::io::Error::other(other),
                },
            })?;
            entries.push(ManifestEntry {
                wav_path,
                label: profile.label,
                split,
                clip_seed,
                sequence_id: seq_id as u32,
            });
        }
    }

    let manifest = DatasetManifest { root_dir: config.out_dir.clone(), entries };
    manifest.write(&config.out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::wav::read_wav;
    use crate::dsp::{stft, StftConfig};
    use std::collections::HashMap;
    use std::sync::OnceLock;
    use tempfile::TempDir;

    static CORPUS: OnceLock<(TempDir, DatasetManifest)> = OnceLock::new();

    /// Shared 20-sequence corpus; built once for the whole test binary.
    fn corpus() -> &'static (TempDir, DatasetManifest) {
        CORPUS.get_or_init(|| {
            let dir = tempfile::tempdir().expect("tempdir");
            let cfg = DatasetConfig { n_sequences: 20, ..DatasetConfig::new(dir.path()) };
            let manifest = build_dataset(&cfg).expect("build_dataset");
            (dir, manifest)
        })
    }

    #[test]
    fn corpus_has_the_contracted_shape() {
        let (_dir, m) = corpus();
        assert_eq!(m.entries.len(), 40);
        let mut counts: HashMap<(ClassLabel, Split), usize> = HashMap::new();
        for e in &m.entries {
            *counts.entry((e.label, e.split)).or_default() += 1;
        }
        assert_eq!(counts[&(ClassLabel::Premium, Split::Train)], 16);
        assert_eq!(counts[&(ClassLabel::Cheap, Split::Train)], 16);
        assert_eq!(counts[&(ClassLabel::Premium, Split::Test)], 4);
        assert_eq!(counts[&(ClassLabel::Cheap, Split::Test)], 4);
    }

    #[test]
    fn every_path_decodes_as_a_valid_clip() {
        let (_dir, m) = corpus();
        for e in &m.entries {
            let audio: crate::dsp::AudioBuffer<f64> = read_wav(&m.resolve(e)).expect("decode");
            assert_eq!(audio.samples.len(), 48_000, "{}", e.wav_path);
        }
    }

    #[test]
    fn split_is_by_sequence_id() {
        let (_dir, m) = corpus();
        let mut by_seq: HashMap<u32, Vec<Split>> = HashMap::new();
        for e in &m.entries {
            by_seq.entry(e.sequence_id).or_default().push(e.split);
        }
        assert_eq!(by_seq.len(), 20);
        for (seq, splits) in by_seq {
            assert_eq!(splits.len(), 2, "sequence {seq}");
            assert_eq!(splits[0], splits[1], "sequence {seq} straddles the split");
        }
    }

    #[test]
    fn paired_clips_share_their_note_seed() {
        let (_dir, m) = corpus();
        let mut by_seq: HashMap<u32, Vec<u64>> = HashMap::new();
        for e in &m.entries {
            by_seq.entry(e.sequence_id).or_default().push(e.clip_seed);
        }
        for (seq, seeds) in by_seq {
            assert_eq!(seeds[0], seeds[1], "sequence {seq} renders from different seeds");
        }
    }

    #[test]
    fn manifest_roundtrips_exactly() {
        let (dir, m) = corpus();
        let parsed = DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).expect("read manifest");
        assert_eq!(&parsed, m);
    }

    #[test]
    fn malformed_manifests_are_rejected_with_detail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(DatasetManifest::read(&path), Err(SynthError::MalformedManifest { .. })));
        std::fs::write(&path, format!("{MANIFEST_HEADER}\na.wav,7,train,1,0\n")).unwrap();
        let err = DatasetManifest::read(&path).unwrap_err();
        assert!(err.to_string().contains("bad label"), "{err}");
        std::fs::write(&path, format!("{MANIFEST_HEADER}\na.wav,0,validation,1,0\n")).unwrap();
        let err = DatasetManifest::read(&path).unwrap_err();
        assert!(err.to_string().contains("bad split"), "{err}");
    }

    #[test]
    fn too_few_sequences_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { n_sequences: 5, ..DatasetConfig::new(dir.path()) };
        assert!(matches!(build_dataset(&cfg), Err(SynthError::TooFewSequences { got: 5 })));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let (dir_a, m) = corpus();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { n_sequences: 20, ..DatasetConfig::new(dir_b.path()) };
        build_dataset(&cfg).expect("rebuild");
        let manifest_a = std::fs::read(dir_a.path().join(MANIFEST_FILE)).unwrap();
        let manifest_b = std::fs::read(dir_b.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest_a, manifest_b, "manifests differ between rebuilds");
        for e in &m.entries {
            let a = std::fs::read(dir_a.path().join(&e.wav_path)).unwrap();
            let b = std::fs::read(dir_b.path().join(&e.wav_path)).unwrap();
            assert_eq!(a, b, "{} differs between rebuilds", e.wav_path);
        }
    }

    #[test]
    fn classes_separate_under_a_nearest_centroid_classifier() {
        // Sanity floor well below the scorer's target: mean-over-time
        // log-magnitude profiles alone should separate the classes.
        let (_dir, m) = corpus();
        let cfg = StftConfig::default();
        let profile_of = |e: &ManifestEntry| -> Vec<f64> {
            let audio: crate::dsp::AudioBuffer<f64> = read_wav(&m.resolve(e)).unwrap();
            let spec = stft(&audio, &cfg).unwrap();
            let bins = spec.log_mag.cols();
            let frames = spec.log_mag.rows();
            let mut mean = vec![0.0; bins];
            for r in 0..frames {
                for (b, v) in spec.log_mag.row(r).iter().enumerate() {
                    mean[b] += *v;
                }
            }
            for v in &mut mean {
                *v /= frames as f64;
            }
            mean
        };

        let mut centroids = HashMap::new();
        for label in [ClassLabel::Premium, ClassLabel::Cheap] {
            let members: Vec<Vec<f64>> = m
                .split_entries(Split::Train)
                .filter(|e| e.label == label)
                .map(profile_of)
                .collect();
            let bins = members[0].len();
            let mut c = vec![0.0; bins];
            for p in &members {
                for (acc, v) in c.iter_mut().zip(p.iter()) {
                    *acc += *v;
                }
            }
            for v in &mut c {
                *v /= members.len() as f64;
            }
            centroids.insert(label, c);
        }

        let dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
        let mut correct = 0;
        let mut total = 0;
        for e in m.split_entries(Split::Test) {
            let p = profile_of(e);
            let d_prem = dist(&p, &centroids[&ClassLabel::Premium]);
            let d_cheap = dist(&p, &centroids[&ClassLabel::Cheap]);
            let predicted = if d_prem <= d_cheap { ClassLabel::Premium } else { ClassLabel::Cheap };
            if predicted == e.label {
                correct += 1;
            }
            total += 1;
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.85, "nearest-centroid accuracy {acc} ({correct}/{total})");
    }
}

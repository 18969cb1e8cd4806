//! On-disk dataset layout (format version 1).
//!
//! ```text
//! <dir>/manifest.json   metadata, vocabulary, split, per-sample table
//! <dir>/data.bin        f32 little-endian frames, row-major, samples in manifest order
//! <dir>/captions.bin    u16 little-endian token ids, samples in manifest order
//! ```
//!
//! Sample `i` owns `length_i * feature_dim` floats of `data.bin` starting at
//! `sum_{j<i} length_j * feature_dim`, and tokens
//! `captions.bin[caption_offset_i .. caption_offset_i + caption_len_i]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attrs::{DescribedMask, MotionAttributes};
use super::caption::{CaptionTokens, VOCABULARY, VOCAB_SIZE};
use super::corpus::{Dataset, Sample};
use super::motion::MotionSequence;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";
pub const CAPTIONS_FILE: &str = "captions.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub feature_dim: usize,
    pub frame_rate: f32,
    pub length_range: (usize, usize),
    pub vocabulary: Vec<String>,
    pub vocab_size: usize,
    pub counts: Counts,
    pub split: Split,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counts {
    pub samples: usize,
    pub frames: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub length: usize,
    pub caption_offset: usize,
    pub caption_len: usize,
    pub described: DescribedMask,
    pub attrs: MotionAttributes,
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut data = Vec::new();
    let mut captions = Vec::new();
    let mut entries = Vec::with_capacity(dataset.len());
    let mut frames = 0;
    for s in &dataset.samples {
        if s.motion.dim() != dataset.feature_dim {
            return Err(Error::Argument(format!(
                "sample has dimension {}, dataset declares {}",
                s.motion.dim(),
                dataset.feature_dim
            )));
        }
        entries.push(SampleEntry {
            length: s.motion.len(),
            caption_offset: captions.len() / 2,
            caption_len: s.caption.tokens.len(),
            described: s.caption.described,
            attrs: s.attrs,
        });
        frames += s.motion.len();
        data.extend(s.motion.as_slice().iter().flat_map(|v| v.to_le_bytes()));
        captions.extend(s.caption.tokens.iter().flat_map(|t| t.to_le_bytes()));
    }
    let manifest = Manifest {
        version: DATASET_FORMAT_VERSION,
        feature_dim: dataset.feature_dim,
        frame_rate: dataset.frame_rate,
        length_range: dataset.length_range,
        vocabulary: VOCABULARY.iter().map(|s| s.to_string()).collect(),
        vocab_size: VOCAB_SIZE,
        counts: Counts {
            samples: dataset.len(),
            frames,
            tokens: captions.len() / 2,
        },
        split: Split {
            train: dataset.train_indices.clone(),
            test: dataset.test_indices.clone(),
        },
        samples: entries,
    };
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write(DATA_FILE, &data)?;
    write(CAPTIONS_FILE, &captions)?;
    write(MANIFEST_FILE, &serde_json::to_vec_pretty(&manifest)?)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::format(&manifest_path, format!("unparseable manifest: {e}")))?;
    let bad = |reason: String| Error::format(&manifest_path, reason);
    if m.version != DATASET_FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} unsupported (expected {DATASET_FORMAT_VERSION})",
            m.version
        )));
    }
    if m.samples.len() != m.counts.samples {
        return Err(bad(format!(
            "sample table has {} rows, counts say {}",
            m.samples.len(),
            m.counts.samples
        )));
    }
    let frames: usize = m.samples.iter().map(|s| s.length).sum();
    if frames != m.counts.frames {
        return Err(bad(format!("sample lengths sum to {frames}, counts say {}", m.counts.frames)));
    }

    let data_path = dir.join(DATA_FILE);
    let data = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = m.counts.frames * m.feature_dim * 4;
    if data.len() != expected {
        return Err(Error::format(
            &data_path,
            format!("{} bytes, expected {expected}", data.len()),
        ));
    }
    let cap_path = dir.join(CAPTIONS_FILE);
    let caps = fs::read(&cap_path).map_err(|e| Error::io(&cap_path, e))?;
    if caps.len() != m.counts.tokens * 2 {
        return Err(Error::format(
            &cap_path,
            format!("{} bytes, expected {}", caps.len(), m.counts.tokens * 2),
        ));
    }

    let floats: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let tokens: Vec<u16> = caps.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();

    let mut samples = Vec::with_capacity(m.samples.len());
    let mut cursor = 0;
    for (i, e) in m.samples.iter().enumerate() {
        let n = e.length * m.feature_dim;
        let motion = MotionSequence::new(floats[cursor..cursor + n].to_vec(), m.feature_dim, m.frame_rate)?;
        cursor += n;
        let end = e.caption_offset + e.caption_len;
        if end > tokens.len() {
            return Err(Error::format(&cap_path, format!("sample {i} caption range ends at {end}, file holds {}", tokens.len())));
        }
        let caption = CaptionTokens {
            tokens: tokens[e.caption_offset..end].to_vec(),
            described: e.described,
        };
        caption
            .validate()
            .map_err(|err| Error::format(&cap_path, format!("sample {i}: {err}")))?;
        samples.push(Sample {
            caption,
            motion,
            attrs: e.attrs,
        });
    }
    let n = samples.len();
    if m.split.train.iter().chain(&m.split.test).any(|&i| i >= n) {
        return Err(bad("split index out of range".into()));
    }
    Ok(Dataset {
        feature_dim: m.feature_dim,
        frame_rate: m.frame_rate,
        length_range: m.length_range,
        samples,
        train_indices: m.split.train,
        test_indices: m.split.test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syndata::corpus::{generate_corpus, CorpusSpec};

    fn corpus() -> Dataset {
        generate_corpus(&CorpusSpec {
            n_samples: 100,
            seed: 11,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = corpus();
        write_dataset(&d, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        let bits = |d: &Dataset| -> Vec<u32> {
            d.samples.iter().flat_map(|s| s.motion.as_slice().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&d));
    }

    #[test]
    fn truncated_blob_names_file() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&corpus(), dir.path()).unwrap();
        let p = dir.path().join(DATA_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Format { file, .. }) => assert!(file.ends_with(DATA_FILE)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_names_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&corpus(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        m["counts"]["samples"] = serde_json::json!(99);
        fs::write(&p, serde_json::to_vec(&m).unwrap()).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Format { file, .. }) => assert!(file.ends_with(MANIFEST_FILE)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&corpus(), dir.path()).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), b"{not json").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }
}

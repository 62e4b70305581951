//! On-disk layout of a processed dataset.
//!
//! Each split is one binary window file:
//!
//! ```text
//! "ECGWIN\0\0"            8-byte magic
//! u32 format version      little-endian, currently 1
//! u32 leads, u32 samples
//! u64 window count
//! per window: u32 id length, id bytes (UTF-8), u64 segment index,
//!             leads*samples f32 values, row-major (lead, sample)
//! 32-byte SHA-256 of everything above
//! ```
//!
//! A `manifest.json` next to the split files describes the run.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::split::SplitPolicy;
use super::SegmentWindow;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECGWIN\0\0";
const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.bin";
pub const VAL_FILE: &str = "val.bin";
pub const TEST_FILE: &str = "test.bin";

pub fn encode_windows(windows: &[SegmentWindow]) -> Result<Vec<u8>> {
    let (leads, samples) = windows.first().map_or((0, 0), |w| w.signals.dim());
    let mut buf = Vec::with_capacity(24 + windows.len() * (leads * samples * 4 + 32));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(leads as u32).to_le_bytes());
    buf.extend_from_slice(&(samples as u32).to_le_bytes());
    buf.extend_from_slice(&(windows.len() as u64).to_le_bytes());
    for w in windows {
        if w.signals.dim() != (leads, samples) {
            return Err(Error::Shape(format!(
                "window {} has shape {:?}, expected {:?}",
                w.key(),
                w.signals.dim(),
                (leads, samples)
            )));
        }
        let id = w.source_record_id.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(w.segment_index as u64).to_le_bytes());
        for v in w.signals.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptDataset {
                path: self.path.to_path_buf(),
                reason: "unexpected end of file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_windows(bytes: &[u8], path: &Path) -> Result<Vec<SegmentWindow>> {
    let corrupt = |reason: &str| Error::CorruptDataset {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 20 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a window file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let mut c = Cursor {
        bytes: body,
        pos: 8,
        path,
    };
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let leads = c.u32()? as usize;
    let samples = c.u32()? as usize;
    let count = c.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = c.u32()? as usize;
        let id = std::str::from_utf8(c.take(id_len)?)
            .map_err(|_| corrupt("record id is not UTF-8"))?
            .to_string();
        let segment_index = c.u64()? as usize;
        let raw = c.take(leads * samples * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(SegmentWindow {
            source_record_id: id,
            segment_index,
            signals: Array2::from_shape_vec((leads, samples), values)
                .map_err(|e| corrupt(&e.to_string()))?,
        });
    }
    if c.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(out)
}

pub fn write_windows(path: &Path, windows: &[SegmentWindow]) -> Result<()> {
    let bytes = encode_windows(windows)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_windows(path: &Path) -> Result<Vec<SegmentWindow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_windows(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub record_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub name: String,
    pub records_found: usize,
    pub records_used: usize,
    pub segments: usize,
    pub rejected: Vec<RejectedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub file: String,
    pub windows: usize,
    /// `(record_id, windows contributed)` in file order.
    pub records: Vec<(String, usize)>,
}

/// Distribution of `max |II - (I + III)|` over the ingested records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EinthovenReport {
    pub threshold_mv: f64,
    pub records: usize,
    pub fraction_below_threshold: f64,
    pub median_mv: f64,
    pub p95_mv: f64,
    pub max_mv: f64,
    /// Counts per bin; bin edges in `histogram_edges_mv`.
    pub histogram_edges_mv: Vec<f64>,
    pub histogram: Vec<usize>,
    pub min_fraction_required: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub pipeline_version: String,
    pub seed: u64,
    pub split_policy: SplitPolicy,
    pub sampling_rate_hz: u32,
    pub window_len: usize,
    pub corpora: Vec<CorpusSummary>,
    pub train: Option<SplitSummary>,
    pub val: Option<SplitSummary>,
    pub test: Option<SplitSummary>,
    pub einthoven: Vec<(String, EinthovenReport)>,
}

impl DatasetManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Loaded train/validation/test windows.
#[derive(Debug, Clone, Default)]
pub struct ProcessedData {
    pub train: Vec<SegmentWindow>,
    pub val: Vec<SegmentWindow>,
    pub test: Vec<SegmentWindow>,
}

impl ProcessedData {
    /// Loads whichever split files the manifest lists.
    pub fn load(dir: &Path) -> Result<(DatasetManifest, Self)> {
        let manifest = DatasetManifest::read(dir)?;
        let load = |s: &Option<SplitSummary>| -> Result<Vec<SegmentWindow>> {
            match s {
                Some(s) => read_windows(&dir.join(&s.file)),
                None => Ok(Vec::new()),
            }
        };
        let data = ProcessedData {
            train: load(&manifest.train)?,
            val: load(&manifest.val)?,
            test: load(&manifest.test)?,
        };
        Ok((manifest, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows() -> Vec<SegmentWindow> {
        (0..3)
            .map(|i| SegmentWindow {
                source_record_id: format!("patient00{i}/s000{i}_re"),
                segment_index: i * 2,
                signals: Array2::from_shape_fn((12, 16), |(c, t)| (c as f32) * 0.5 - t as f32 * 1e-3 + i as f32),
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_windows(&p, &windows()).unwrap();
        assert_eq!(read_windows(&p).unwrap(), windows());
        write_windows(&p, &[]).unwrap();
        assert!(read_windows(&p).unwrap().is_empty());
    }

    #[test]
    fn detects_truncation_and_tampering() {
        let bytes = encode_windows(&windows()).unwrap();
        let path = Path::new("mem");
        assert!(decode_windows(&bytes[..bytes.len() - 5], path).is_err());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(
            decode_windows(&flipped, path),
            Err(Error::CorruptDataset { .. })
        ));
        assert!(decode_windows(b"garbage", path).is_err());
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let mut w = windows();
        w[1].signals = Array2::zeros((12, 8));
        assert!(encode_windows(&w).is_err());
    }
}

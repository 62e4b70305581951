//! ECG ingestion: WFDB parsing, 125 Hz resampling, windowing, lead
//! integrity checks and deterministic dataset splits.

pub mod prepare;
pub mod resample;
pub mod split;
pub mod store;
pub mod wfdb;
pub mod window;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leads::{LeadLabel, NUM_LEADS};

pub use resample::resample_to_125hz;
pub use split::{split_by_patient, split_train_val, DatasetSplit};
pub use window::{check_einthoven, segment_record, select_leads, truncate_to_window};

/// Model sampling rate after resampling.
pub const TARGET_RATE_HZ: u32 = 125;
/// Samples per window: 8192 ms at 125 Hz.
pub const WINDOW_LEN: usize = 1024;

/// One 12-lead recording in millivolts, rows in canonical lead order.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub signals: Array2<f64>,
    pub sampling_rate_hz: u32,
    pub patient_id: String,
    pub metadata: BTreeMap<String, String>,
}

impl EcgRecord {
    pub fn num_samples(&self) -> usize {
        self.signals.ncols()
    }

    pub fn lead(&self, lead: LeadLabel) -> ndarray::ArrayView1<'_, f64> {
        self.signals.row(lead.index())
    }

    /// Rejects records that break the shape or finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        if self.signals.nrows() != NUM_LEADS {
            return Err(Error::Shape(format!(
                "record {} has {} rows, expected {NUM_LEADS}",
                self.record_id,
                self.signals.nrows()
            )));
        }
        if self.num_samples() == 0 {
            return Err(Error::Shape(format!("record {} is empty", self.record_id)));
        }
        check_finite(&self.record_id, &self.signals)
    }
}

fn check_finite(record_id: &str, signals: &Array2<f64>) -> Result<()> {
    let mut count = 0usize;
    let mut first = None;
    for ((lead, t), v) in signals.indexed_iter() {
        if !v.is_finite() {
            count += 1;
            first.get_or_insert((lead, t));
        }
    }
    match first {
        None => Ok(()),
        Some((lead, sample)) => Err(Error::NonFinite {
            record: record_id.to_string(),
            count,
            lead: LeadLabel::from_index(lead)
                .map(|l| l.to_string())
                .unwrap_or_else(|| lead.to_string()),
            sample,
        }),
    }
}

/// A fixed-length 12-lead window at 125 Hz, stored as `f32` millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub source_record_id: String,
    pub segment_index: usize,
    pub signals: Array2<f32>,
}

impl SegmentWindow {
    pub fn key(&self) -> SegmentKey {
        SegmentKey {
            record_id: self.source_record_id.clone(),
            segment_index: self.segment_index,
        }
    }
}

/// Identifies a window within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub record_id: String,
    pub segment_index: usize,
}

impl std::fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.record_id, self.segment_index)
    }
}

/// Reads a WFDB record and maps its channels onto the 12 standard leads.
///
/// Extra channels (PTB's Frank leads, for instance) are dropped. The
/// original sampling rate is kept.
pub fn parse_record(path: &Path) -> Result<EcgRecord> {
    let hea = wfdb::header_path(path);
    if !hea.exists() {
        return Err(Error::Ingestion {
            path: hea,
            reason: "header file not found".into(),
        });
    }
    let raw = wfdb::read_record(&hea)?;
    let header = &raw.header;

    let mut rows: [Option<usize>; NUM_LEADS] = [None; NUM_LEADS];
    for (i, s) in header.signals.iter().enumerate() {
        if let Ok(lead) = s.description.parse::<LeadLabel>() {
            rows[lead.index()].get_or_insert(i);
        }
    }
    let missing: Vec<String> = LeadLabel::ALL
        .iter()
        .filter(|l| rows[l.index()].is_none())
        .map(|l| l.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLeads {
            record: header.record_name.clone(),
            missing,
        });
    }

    let n = raw.signals[rows[0].unwrap()].len();
    let mut signals = Array2::<f64>::zeros((NUM_LEADS, n));
    for (lead, row) in rows.iter().enumerate() {
        let src = &raw.signals[row.unwrap()];
        if src.len() != n {
            return Err(Error::Ingestion {
                path: hea.clone(),
                reason: "leads have unequal lengths".into(),
            });
        }
        signals
            .row_mut(lead)
            .iter_mut()
            .zip(src)
            .for_each(|(d, s)| *d = *s);
    }

    let fs = header.sampling_frequency;
    if fs.fract() != 0.0 {
        return Err(Error::UnsupportedRate {
            rate: fs as u32,
            target: TARGET_RATE_HZ,
        });
    }
    let patient_id = header
        .info
        .get("patient")
        .cloned()
        .or_else(|| {
            hea.parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .filter(|n| n.starts_with("patient"))
        })
        .unwrap_or_else(|| header.record_name.clone());
    let record = EcgRecord {
        record_id: header.record_name.clone(),
        signals,
        sampling_rate_hz: fs as u32,
        patient_id,
        metadata: header.info.clone(),
    };
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wfdb::{write_record, SignalFormat, WriteSpec};

    const NAMES: [&str; 12] = [
        "i", "ii", "iii", "avr", "avl", "avf", "v1", "v2", "v3", "v4", "v5", "v6",
    ];

    fn write(dir: &Path, name: &str, names: &[&str], n: usize, nan_at: Option<usize>) -> std::path::PathBuf {
        let signals: Vec<Vec<f64>> = (0..names.len())
            .map(|c| {
                (0..n)
                    .map(|t| {
                        if Some(t) == nan_at && c == 3 {
                            f64::NAN
                        } else {
                            ((t as f64) * 0.01 + c as f64).sin()
                        }
                    })
                    .collect()
            })
            .collect();
        write_record(
            dir,
            &WriteSpec {
                record_name: name,
                sampling_frequency: 1000,
                format: SignalFormat::Format16,
                gain: 2000.0,
                names,
                signals: &signals,
                comments: &[("sex", "male")],
            },
        )
        .unwrap()
    }

    #[test]
    fn parses_and_reorders_leads() {
        let dir = tempfile::tempdir().unwrap();
        // Shuffled order plus three Frank leads that must be dropped.
        let names = [
            "v6", "vx", "i", "ii", "iii", "avr", "avl", "avf", "v1", "v2", "v3", "v4", "v5", "vy",
            "vz",
        ];
        let p = write(dir.path(), "s0001_re", &names, 3000, None);
        let rec = parse_record(&p).unwrap();
        assert_eq!(rec.signals.dim(), (12, 3000));
        assert_eq!(rec.sampling_rate_hz, 1000);
        // canonical V6 row came from file channel 0
        let expect = ((10.0f64) * 0.01 + 0.0).sin();
        assert!((rec.lead(LeadLabel::V6)[10] - expect).abs() < 1e-3);
        let expect_i = ((10.0f64) * 0.01 + 2.0).sin();
        assert!((rec.lead(LeadLabel::I)[10] - expect_i).abs() < 1e-3);
        assert_eq!(rec.metadata["sex"], "male");
        // deterministic
        assert_eq!(parse_record(&p).unwrap(), rec);
    }

    #[test]
    fn eleven_leads_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r", &NAMES[..11], 100, None);
        match parse_record(&p) {
            Err(Error::MissingLeads { missing, .. }) => assert_eq!(missing, vec!["V6"]),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_nan_samples() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            parse_record(&dir.path().join("nope")),
            Err(Error::Ingestion { .. })
        ));
        let p = write(dir.path(), "bad", &NAMES, 100, Some(17));
        match parse_record(&p) {
            Err(Error::NonFinite {
                record,
                count,
                lead,
                sample,
            }) => {
                assert_eq!(record, "bad");
                assert_eq!(count, 1);
                assert_eq!(lead, "aVR");
                assert_eq!(sample, 17);
            }
            other => panic!("expected data-quality error, got {other:?}"),
        }
    }
}

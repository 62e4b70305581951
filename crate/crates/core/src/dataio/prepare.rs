//! Corpus → processed dataset: parse, resample, window, split, write.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use walkdir::WalkDir;

use super::split::{split_by_patient, split_train_val, SplitPolicy};
use super::store::{
    write_windows, CorpusSummary, DatasetManifest, EinthovenReport, RejectedRecord, SplitSummary,
    TEST_FILE, TRAIN_FILE, VAL_FILE,
};
use super::{
    check_einthoven, parse_record, resample_to_125hz, segment_record, truncate_to_window,
    SegmentWindow, TARGET_RATE_HZ, WINDOW_LEN,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::PIPELINE_VERSION;

/// Records whose Einthoven residual exceeds this are counted against the gate.
pub const EINTHOVEN_THRESHOLD_MV: f64 = 0.1;
/// Minimum fraction of records that must fall under the threshold.
pub const EINTHOVEN_MIN_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// Training/validation corpus: one truncated window per recording.
    PtbXl,
    /// Test corpus: every recording cut into consecutive windows.
    Ptb,
}

impl CorpusKind {
    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::PtbXl => "ptb-xl",
            CorpusKind::Ptb => "ptb",
        }
    }
}

pub const EXPECTED_LAYOUT: &str = "expected <raw>/ptb-xl/ (PTB-XL: RECORDS, records500/…/*.hea|.dat, \
optional ptbxl_database.csv) and/or <raw>/ptb/ (PTB: RECORDS, patientNNN/*.hea|.dat), \
or a single corpus root passed directly";

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub raw_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub policy: SplitPolicy,
}

fn looks_like_ptbxl(dir: &Path) -> bool {
    dir.join("ptbxl_database.csv").exists() || dir.join("records500").is_dir()
}

fn looks_like_ptb(dir: &Path) -> bool {
    fs::read_dir(dir).is_ok_and(|rd| {
        rd.flatten().any(|e| {
            e.path().is_dir() && e.file_name().to_string_lossy().starts_with("patient")
        })
    })
}

/// Finds the corpora under `raw_dir`.
pub fn discover_corpora(raw_dir: &Path) -> Vec<(CorpusKind, PathBuf)> {
    let mut found = Vec::new();
    if let Ok(rd) = fs::read_dir(raw_dir) {
        let mut dirs: Vec<PathBuf> = rd.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
        dirs.sort();
        for d in dirs {
            let name = d.file_name().unwrap_or_default().to_string_lossy().to_ascii_lowercase();
            if name.starts_with("ptb-xl") || name.starts_with("ptbxl") || looks_like_ptbxl(&d) {
                found.push((CorpusKind::PtbXl, d));
            } else if name.starts_with("ptb") || looks_like_ptb(&d) {
                found.push((CorpusKind::Ptb, d));
            }
        }
    }
    if found.is_empty() {
        if looks_like_ptbxl(raw_dir) {
            found.push((CorpusKind::PtbXl, raw_dir.to_path_buf()));
        } else if looks_like_ptb(raw_dir) {
            found.push((CorpusKind::Ptb, raw_dir.to_path_buf()));
        }
    }
    found
}

/// Record paths relative to `root`, without extension, in sorted order.
/// PTB-XL's 100 Hz copies are skipped when the 500 Hz ones are present.
pub fn list_records(root: &Path) -> Result<Vec<String>> {
    let listing = root.join("RECORDS");
    let mut ids: Vec<String> = if listing.exists() {
        fs::read_to_string(&listing)
            .map_err(|e| Error::io(&listing, e))?
            .lines()
            .map(|l| l.trim().trim_end_matches('/').to_string())
            .filter(|l| !l.is_empty())
            .collect()
    } else {
        WalkDir::new(root)
            .into_iter()
            .flatten()
            .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "hea"))
            .filter_map(|e| {
                let rel = e.path().strip_prefix(root).ok()?.with_extension("");
                Some(rel.to_string_lossy().replace('\\', "/"))
            })
            .collect()
    };
    if ids.iter().any(|i| i.contains("records500/")) {
        ids.retain(|i| !i.contains("records100/"));
    }
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// `filename_hr` → `patient_id` from PTB-XL's database table, when present.
fn ptbxl_patients(root: &Path) -> BTreeMap<String, String> {
    let path = root.join("ptbxl_database.csv");
    let mut out = BTreeMap::new();
    let Ok(mut rdr) = csv::Reader::from_path(&path) else {
        return out;
    };
    let Ok(headers) = rdr.headers().cloned() else {
        return out;
    };
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(pid), Some(fname)) = (col("patient_id"), col("filename_hr")) else {
        return out;
    };
    for row in rdr.records().flatten() {
        if let (Some(p), Some(f)) = (row.get(pid), row.get(fname)) {
            out.insert(f.to_string(), p.to_string());
        }
    }
    out
}

struct Processed {
    id: String,
    patient: String,
    residual: f64,
    windows: Vec<SegmentWindow>,
}

fn process_one(root: &Path, id: &str, kind: CorpusKind) -> Result<Processed> {
    let mut record = parse_record(&root.join(id))?;
    record.record_id = id.to_string();
    let residual = check_einthoven(&record);
    let record = resample_to_125hz(&record)?;
    let windows = match kind {
        CorpusKind::PtbXl => vec![truncate_to_window(&record)?],
        CorpusKind::Ptb => segment_record(&record)?,
    };
    Ok(Processed {
        id: id.to_string(),
        patient: record.patient_id,
        residual,
        windows,
    })
}

fn einthoven_report(residuals: &[f64]) -> EinthovenReport {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let q = |p: f64| -> f64 {
        if n == 0 {
            0.0
        } else {
            sorted[((p * (n - 1) as f64).round() as usize).min(n - 1)]
        }
    };
    let below = sorted.iter().filter(|&&r| r < EINTHOVEN_THRESHOLD_MV).count();
    let fraction = if n == 0 { 1.0 } else { below as f64 / n as f64 };
    let edges = vec![0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, f64::MAX];
    let mut histogram = vec![0usize; edges.len() - 1];
    for r in &sorted {
        let bin = edges.windows(2).position(|e| *r >= e[0] && *r < e[1]).unwrap_or(histogram.len() - 1);
        histogram[bin] += 1;
    }
    EinthovenReport {
        threshold_mv: EINTHOVEN_THRESHOLD_MV,
        records: n,
        fraction_below_threshold: fraction,
        median_mv: q(0.5),
        p95_mv: q(0.95),
        max_mv: sorted.last().copied().unwrap_or(0.0),
        histogram_edges_mv: edges,
        histogram,
        min_fraction_required: EINTHOVEN_MIN_FRACTION,
        passed: fraction >= EINTHOVEN_MIN_FRACTION,
    }
}

/// Outcome of ingesting one corpus.
pub struct CorpusOutput {
    pub summary: CorpusSummary,
    pub einthoven: EinthovenReport,
    /// Per accepted record, in sorted id order.
    pub records: Vec<(String, String, Vec<SegmentWindow>)>,
}

pub fn ingest_corpus(kind: CorpusKind, root: &Path) -> Result<CorpusOutput> {
    let ids = list_records(root)?;
    info!("{}: {} records listed under {}", kind.name(), ids.len(), root.display());
    let results = exec::map_slice(&ids, |id| (id.clone(), process_one(root, id, kind)));
    let patients = match kind {
        CorpusKind::PtbXl => ptbxl_patients(root),
        CorpusKind::Ptb => BTreeMap::new(),
    };

    let mut rejected = Vec::new();
    let mut residuals = Vec::new();
    let mut records = Vec::new();
    for (id, r) in results {
        match r {
            Ok(p) => {
                residuals.push(p.residual);
                let patient = patients.get(&p.id).cloned().unwrap_or(p.patient);
                records.push((p.id, patient, p.windows));
            }
            Err(e) => {
                warn!("{}: rejecting {id}: {e}", kind.name());
                rejected.push(RejectedRecord {
                    record_id: id,
                    reason: e.to_string(),
                });
            }
        }
    }
    let segments = records.iter().map(|r| r.2.len()).sum();
    Ok(CorpusOutput {
        summary: CorpusSummary {
            name: kind.name().to_string(),
            records_found: ids.len(),
            records_used: records.len(),
            segments,
            rejected,
        },
        einthoven: einthoven_report(&residuals),
        records,
    })
}

fn split_summary(file: &str, windows: &[SegmentWindow]) -> SplitSummary {
    let mut records: Vec<(String, usize)> = Vec::new();
    for w in windows {
        match records.last_mut() {
            Some((id, n)) if *id == w.source_record_id => *n += 1,
            _ => records.push((w.source_record_id.clone(), 1)),
        }
    }
    SplitSummary {
        file: file.to_string(),
        windows: windows.len(),
        records,
    }
}

/// Runs the full preparation pipeline and writes split files plus manifest
/// into `out_dir`. Nothing is written if no corpus is found.
pub fn prepare_dataset(opts: &PrepareOptions) -> Result<DatasetManifest> {
    let corpora = discover_corpora(&opts.raw_dir);
    if corpora.is_empty() {
        return Err(Error::Ingestion {
            path: opts.raw_dir.clone(),
            reason: format!("no ECG corpus found; {EXPECTED_LAYOUT}"),
        });
    }

    let mut manifest = DatasetManifest {
        pipeline_version: PIPELINE_VERSION.to_string(),
        seed: opts.seed,
        split_policy: opts.policy,
        sampling_rate_hz: TARGET_RATE_HZ,
        window_len: WINDOW_LEN,
        corpora: Vec::new(),
        train: None,
        val: None,
        test: None,
        einthoven: Vec::new(),
    };
    let mut outputs: Vec<(String, SplitSummary, Vec<SegmentWindow>)> = Vec::new();

    for (kind, root) in corpora {
        let out = ingest_corpus(kind, &root)?;
        manifest.einthoven.push((kind.name().to_string(), out.einthoven.clone()));
        manifest.corpora.push(out.summary.clone());
        match kind {
            CorpusKind::PtbXl => {
                if out.records.is_empty() {
                    continue;
                }
                let split = match opts.policy {
                    SplitPolicy::Record => split_train_val(
                        &out.records.iter().map(|r| r.0.clone()).collect::<Vec<_>>(),
                        opts.seed,
                    )?,
                    SplitPolicy::Patient => split_by_patient(
                        &out.records.iter().map(|r| (r.0.clone(), r.1.clone())).collect::<Vec<_>>(),
                        opts.seed,
                    )?,
                };
                let mut by_id: BTreeMap<String, Vec<SegmentWindow>> =
                    out.records.into_iter().map(|(id, _, w)| (id, w)).collect();
                let mut gather = |ids: &[String]| -> Vec<SegmentWindow> {
                    ids.iter().flat_map(|id| by_id.remove(id).unwrap_or_default()).collect()
                };
                let train = gather(&split.train_ids);
                let val = gather(&split.val_ids);
                let ts = split_summary(TRAIN_FILE, &train);
                let vs = split_summary(VAL_FILE, &val);
                manifest.train = Some(ts.clone());
                manifest.val = Some(vs.clone());
                outputs.push((TRAIN_FILE.into(), ts, train));
                outputs.push((VAL_FILE.into(), vs, val));
            }
            CorpusKind::Ptb => {
                let test: Vec<SegmentWindow> =
                    out.records.into_iter().flat_map(|(_, _, w)| w).collect();
                let s = split_summary(TEST_FILE, &test);
                manifest.test = Some(s.clone());
                outputs.push((TEST_FILE.into(), s, test));
            }
        }
    }

    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    for (file, _, windows) in &outputs {
        write_windows(&opts.out_dir.join(file), windows)?;
    }
    manifest.write(&opts.out_dir)?;
    Ok(manifest)
}

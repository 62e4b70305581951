//! Synthetic 12-lead ECG from a rotating cardiac dipole.
//!
//! Each beat is a sum of Gaussian P, Q, R, S and T waves, each with its own
//! 3-D dipole direction. Limb leads are projections onto the frontal plane
//! and satisfy II = I + III exactly; the augmented leads are built from
//! them the usual way. Chest leads project onto directions swept through
//! the horizontal plane, so neighbouring V leads are strongly correlated
//! and the anterior component is invisible to the limb leads.
//!
//! Used by tests, benches and the acceptance suite when no real corpus is
//! available.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::wfdb::{write_record, SignalFormat, WriteSpec};
use crate::dataio::{EcgRecord, SegmentWindow};
use crate::error::{Error, Result};
use crate::exec;
use crate::leads::{LeadLabel, NUM_LEADS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Samples per lead.
    pub len: usize,
    pub sampling_rate_hz: f64,
    /// Standard deviation of additive sensor noise (mV).
    pub noise_mv: f64,
    /// Peak amplitude of baseline wander (mV).
    pub wander_mv: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            len: 1024,
            sampling_rate_hz: 125.0,
            noise_mv: 0.01,
            wander_mv: 0.05,
        }
    }
}

struct Wave {
    /// Offset from the R peak, seconds.
    offset: f64,
    width: f64,
    amplitude: f64,
    dir: [f64; 3],
}

/// Horizontal-plane angles of V1..V6 (degrees from anterior toward left).
const CHEST_ANGLES: [f64; 6] = [-25.0, 0.0, 25.0, 50.0, 75.0, 100.0];

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn waves(rng: &mut ChaCha8Rng) -> Vec<Wave> {
    let mut jitter = |base: [f64; 3]| {
        unit([
            base[0] + rng.gen_range(-0.25..0.25),
            base[1] + rng.gen_range(-0.25..0.25),
            base[2] + rng.gen_range(-0.25..0.25),
        ])
    };
    // (x: leftward, y: inferior, z: anterior)
    let p = jitter([0.6, 0.7, 0.2]);
    let q = jitter([-0.3, -0.2, 0.9]);
    let r = jitter([0.7, 0.6, -0.4]);
    let s = jitter([-0.2, -0.6, -0.8]);
    let t = jitter([0.6, 0.5, 0.5]);
    let scale = rng.gen_range(0.7..1.3);
    vec![
        Wave { offset: -0.16, width: 0.025, amplitude: 0.15 * scale, dir: p },
        Wave { offset: -0.03, width: 0.010, amplitude: 0.25 * scale, dir: q },
        Wave { offset: 0.0, width: 0.012, amplitude: 1.4 * scale, dir: r },
        Wave { offset: 0.035, width: 0.012, amplitude: 0.5 * scale, dir: s },
        Wave { offset: 0.26, width: 0.045, amplitude: 0.35 * scale, dir: t },
    ]
}

/// Generates a `(12, cfg.len)` millivolt array in canonical lead order.
pub fn synthetic_signals(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let fs = cfg.sampling_rate_hz;
    let n = cfg.len;
    let waves = waves(rng);
    let rr_mean = 60.0 / rng.gen_range(55.0..95.0);
    let first = rng.gen_range(0.0..rr_mean);
    let duration = n as f64 / fs;
    let mut beats = Vec::new();
    let mut t = first - rr_mean;
    while t < duration + rr_mean {
        beats.push(t);
        t += rr_mean * rng.gen_range(0.95..1.05);
    }
    let wander_f = rng.gen_range(0.15..0.45);
    let wander_phase = rng.gen_range(0.0..2.0 * PI);
    let wander_dir = unit([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    let tilt: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.15..0.15)).collect();
    let gain: Vec<f64> = (0..6).map(|_| rng.gen_range(0.8..1.2)).collect();

    let noise = Normal::new(0.0, cfg.noise_mv.max(0.0)).expect("finite noise level");
    let mut out = Array2::<f64>::zeros((NUM_LEADS, n));
    for i in 0..n {
        let ti = i as f64 / fs;
        let mut d = [0.0; 3];
        for &b in &beats {
            for w in &waves {
                let u = (ti - b - w.offset) / w.width;
                if u.abs() < 6.0 {
                    let g = w.amplitude * (-0.5 * u * u).exp();
                    for k in 0..3 {
                        d[k] += g * w.dir[k];
                    }
                }
            }
        }
        let wander = cfg.wander_mv * (2.0 * PI * wander_f * ti + wander_phase).sin();
        for k in 0..3 {
            d[k] += wander * wander_dir[k];
        }

        let lead_i = d[0] + noise.sample(rng);
        let lead_iii = -0.5 * d[0] + 0.75f64.sqrt() * d[1] + noise.sample(rng);
        let lead_ii = lead_i + lead_iii;
        out[[LeadLabel::I.index(), i]] = lead_i;
        out[[LeadLabel::II.index(), i]] = lead_ii;
        out[[LeadLabel::III.index(), i]] = lead_iii;
        out[[LeadLabel::AVR.index(), i]] = -0.5 * (lead_i + lead_ii);
        out[[LeadLabel::AVL.index(), i]] = 0.5 * (lead_i - lead_iii);
        out[[LeadLabel::AVF.index(), i]] = 0.5 * (lead_ii + lead_iii);
        for (k, v) in LeadLabel::PRECORDIAL.iter().enumerate() {
            let a = CHEST_ANGLES[k].to_radians();
            let proj = a.sin() * d[0] + tilt[k] * d[1] + a.cos() * d[2];
            out[[v.index(), i]] = gain[k] * proj + noise.sample(rng);
        }
    }
    out
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` independent windows; window `i` depends only on `(seed, i)`.
pub fn synthetic_windows(cfg: &SynthConfig, n: usize, seed: u64) -> Vec<SegmentWindow> {
    exec::map_range(n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        SegmentWindow {
            source_record_id: format!("synth-{seed}-{i:05}"),
            segment_index: 0,
            signals: synthetic_signals(cfg, &mut rng).mapv(|v| v as f32),
        }
    })
}

/// A full-resolution record, as [`crate::dataio::parse_record`] would return it.
pub fn synthetic_record(cfg: &SynthConfig, record_id: &str, seed: u64) -> EcgRecord {
    let mut rng = stream_rng(seed, 0);
    EcgRecord {
        record_id: record_id.to_string(),
        signals: synthetic_signals(cfg, &mut rng),
        sampling_rate_hz: cfg.sampling_rate_hz as u32,
        patient_id: record_id.to_string(),
        metadata: Default::default(),
    }
}

/// Shape of an on-disk synthetic corpus pair.
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub ptbxl_records: usize,
    pub ptbxl_seconds: f64,
    pub ptbxl_rate_hz: u32,
    pub ptb_patients: usize,
    pub ptb_records_per_patient: usize,
    pub ptb_seconds: f64,
    pub ptb_rate_hz: u32,
}

impl Default for CorpusLayout {
    fn default() -> Self {
        Self {
            ptbxl_records: 20,
            ptbxl_seconds: 10.0,
            ptbxl_rate_hz: 500,
            ptb_patients: 3,
            ptb_records_per_patient: 2,
            ptb_seconds: 20.0,
            ptb_rate_hz: 1000,
        }
    }
}

fn write_one(dir: &Path, name: &str, signals: &Array2<f64>, rate: u32, comments: &[(&str, &str)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<&str> = LeadLabel::ALL.iter().map(|l| l.name()).collect();
    let rows: Vec<Vec<f64>> = signals.rows().into_iter().map(|r| r.to_vec()).collect();
    write_record(
        dir,
        &WriteSpec {
            record_name: name,
            sampling_frequency: rate,
            format: SignalFormat::Format16,
            gain: 1000.0,
            names: &names,
            signals: &rows,
            comments,
        },
    )?;
    Ok(())
}

/// Writes `<raw>/ptb-xl/` and `<raw>/ptb/` in the PhysioNet layouts, with
/// `RECORDS` listings and a PTB-XL `ptbxl_database.csv`.
pub fn write_synthetic_corpus(raw_dir: &Path, layout: &CorpusLayout, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let xl = raw_dir.join("ptb-xl");
    let mut listing = String::new();
    let mut db = String::from("ecg_id,patient_id,filename_lr,filename_hr\n");
    for i in 0..layout.ptbxl_records {
        let cfg = SynthConfig {
            len: (layout.ptbxl_seconds * layout.ptbxl_rate_hz as f64) as usize,
            sampling_rate_hz: layout.ptbxl_rate_hz as f64,
            ..Default::default()
        };
        let mut rng = stream_rng(seed, i as u64);
        let sig = synthetic_signals(&cfg, &mut rng);
        let name = format!("{:05}_hr", i + 1);
        let rel = format!("records500/00000/{name}");
        write_one(&xl.join("records500/00000"), &name, &sig, layout.ptbxl_rate_hz, &[])?;
        listing.push_str(&rel);
        listing.push('\n');
        db.push_str(&format!("{},{},records100/00000/{:05}_lr,{rel}\n", i + 1, 1000 + i / 2, i + 1));
    }
    std::fs::create_dir_all(&xl).map_err(|e| Error::io(&xl, e))?;
    std::fs::write(xl.join("RECORDS"), listing).map_err(|e| Error::io(xl.join("RECORDS"), e))?;
    std::fs::write(xl.join("ptbxl_database.csv"), db).map_err(|e| Error::io(xl.join("ptbxl_database.csv"), e))?;

    let ptb = raw_dir.join("ptb");
    let mut listing = String::new();
    let mut k = 0u64;
    for p in 0..layout.ptb_patients {
        let patient = format!("patient{:03}", p + 1);
        for r in 0..layout.ptb_records_per_patient {
            let cfg = SynthConfig {
                len: (layout.ptb_seconds * layout.ptb_rate_hz as f64) as usize,
                sampling_rate_hz: layout.ptb_rate_hz as f64,
                ..Default::default()
            };
            let mut rng = stream_rng(seed ^ 0x5054_4200, k);
            k += 1;
            let sig = synthetic_signals(&cfg, &mut rng);
            let name = format!("s{:04}lre", p * 10 + r);
            write_one(&ptb.join(&patient), &name, &sig, layout.ptb_rate_hz, &[("age", "60"), ("sex", "male")])?;
            listing.push_str(&format!("{patient}/{name}\n"));
        }
    }
    std::fs::create_dir_all(&ptb).map_err(|e| Error::io(&ptb, e))?;
    std::fs::write(ptb.join("RECORDS"), listing).map_err(|e| Error::io(ptb.join("RECORDS"), e))?;
    Ok((xl, ptb))
}

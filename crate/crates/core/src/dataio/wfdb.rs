//! Reader (and a small writer) for PhysioNet WFDB single-segment records.
//!
//! Covers what PTB and PTB-XL ship: a `.hea` text header and one or more
//! signal files in formats 16 or 212, plus a handful of other common
//! fixed-width formats.
//!
//! Reference: <https://wfdb.io/spec/header-files.html> and
//! <https://wfdb.io/spec/signal-files.html>.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Sample storage format of a signal file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    /// 8-bit offset binary.
    Format80,
    /// 16-bit two's complement, little-endian.
    Format16,
    /// 16-bit two's complement, big-endian.
    Format61,
    /// 16-bit offset binary.
    Format160,
    /// Two 12-bit samples packed into three bytes.
    Format212,
    /// 24-bit two's complement, little-endian.
    Format24,
    /// 32-bit two's complement, little-endian.
    Format32,
}

impl SignalFormat {
    pub fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            80 => Self::Format80,
            16 => Self::Format16,
            61 => Self::Format61,
            160 => Self::Format160,
            212 => Self::Format212,
            24 => Self::Format24,
            32 => Self::Format32,
            _ => return None,
        })
    }

    pub fn code(self) -> u16 {
        match self {
            Self::Format80 => 80,
            Self::Format16 => 16,
            Self::Format61 => 61,
            Self::Format160 => 160,
            Self::Format212 => 212,
            Self::Format24 => 24,
            Self::Format32 => 32,
        }
    }

    /// The reserved "invalid sample" ADC value.
    fn invalid_value(self) -> i32 {
        match self {
            Self::Format80 => -128,
            Self::Format16 | Self::Format61 | Self::Format160 => -32768,
            Self::Format212 => -2048,
            Self::Format24 => -(1 << 23),
            Self::Format32 => i32::MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: SignalFormat,
    pub byte_offset: u64,
    /// ADC units per physical unit. Zero in a header means the default, 200.
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    pub checksum: i32,
    pub block_size: u32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub record_name: String,
    pub sampling_frequency: f64,
    pub num_samples: Option<usize>,
    pub signals: Vec<SignalSpec>,
    /// `key: value` comment lines, keys lower-cased.
    pub info: BTreeMap<String, String>,
}

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses the text of a `.hea` file.
pub fn parse_header(text: &str, path: &Path) -> Result<Header> {
    let mut lines = Vec::new();
    let mut info = BTreeMap::new();
    for raw in text.lines() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once(':') {
                let key = k.trim().to_ascii_lowercase();
                if !key.is_empty() {
                    info.insert(key, v.trim().to_string());
                }
            }
            continue;
        }
        if !line.is_empty() {
            lines.push(line);
        }
    }
    let record_line = lines
        .first()
        .ok_or_else(|| ingestion(path, "empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(ingestion(path, "record line needs a name and signal count"));
    }
    if fields[0].contains('/') {
        return Err(ingestion(path, "multi-segment records are not supported"));
    }
    let num_signals: usize = fields[1]
        .parse()
        .map_err(|_| ingestion(path, format!("bad signal count {:?}", fields[1])))?;
    let sampling_frequency = match fields.get(2) {
        Some(f) => {
            let head = f.split(['/', '(']).next().unwrap_or(f);
            head.parse::<f64>()
                .map_err(|_| ingestion(path, format!("bad sampling frequency {f:?}")))?
        }
        None => 250.0,
    };
    if !(sampling_frequency > 0.0) {
        return Err(ingestion(path, "sampling frequency must be positive"));
    }
    let num_samples = match fields.get(3) {
        Some(n) => Some(
            n.parse::<usize>()
                .map_err(|_| ingestion(path, format!("bad sample count {n:?}")))?,
        ),
        None => None,
    };
    if lines.len() < 1 + num_signals {
        return Err(ingestion(
            path,
            format!(
                "header declares {num_signals} signals but has {} signal lines",
                lines.len() - 1
            ),
        ));
    }
    let signals = lines[1..=num_signals]
        .iter()
        .map(|l| parse_signal_line(l, path))
        .collect::<Result<Vec<_>>>()?;
    Ok(Header {
        record_name: fields[0].to_string(),
        sampling_frequency,
        num_samples,
        signals,
        info,
    })
}

fn parse_signal_line(line: &str, path: &Path) -> Result<SignalSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(ingestion(path, format!("malformed signal line {line:?}")));
    }
    let bad = |what: &str, v: &str| ingestion(path, format!("bad {what} {v:?} in {line:?}"));

    // format[xsamples][:skew][+offset]
    let fmt_field = fields[1];
    let (fmt_part, byte_offset) = match fmt_field.split_once('+') {
        Some((f, off)) => (f, off.parse::<u64>().map_err(|_| bad("byte offset", off))?),
        None => (fmt_field, 0),
    };
    let fmt_part = fmt_part.split(':').next().unwrap_or(fmt_part);
    let (code, spf) = match fmt_part.split_once('x') {
        Some((c, n)) => (c, n),
        None => (fmt_part, "1"),
    };
    if spf != "1" {
        return Err(ingestion(path, "multi-frequency records are not supported"));
    }
    let code: u16 = code.parse().map_err(|_| bad("format", fmt_field))?;
    let format = SignalFormat::from_code(code)
        .ok_or_else(|| ingestion(path, format!("unsupported signal format {code}")))?;

    // gain[(baseline)][/units]
    let mut gain = 200.0;
    let mut baseline = None;
    let mut units = "mV".to_string();
    if let Some(g) = fields.get(2) {
        let (g, u) = match g.split_once('/') {
            Some((g, u)) => (g, Some(u)),
            None => (*g, None),
        };
        if let Some(u) = u {
            units = u.to_string();
        }
        let (g, b) = match g.split_once('(') {
            Some((g, b)) => (g, Some(b.trim_end_matches(')'))),
            None => (g, None),
        };
        gain = g.parse::<f64>().map_err(|_| bad("gain", g))?;
        if gain == 0.0 {
            gain = 200.0;
        }
        if let Some(b) = b {
            baseline = Some(b.parse::<i32>().map_err(|_| bad("baseline", b))?);
        }
    }
    let int_field = |i: usize, default: i64| -> Result<i64> {
        match fields.get(i) {
            Some(v) => v.parse::<i64>().map_err(|_| bad("integer field", v)),
            None => Ok(default),
        }
    };
    let adc_resolution = int_field(3, 12)? as u32;
    let adc_zero = int_field(4, 0)? as i32;
    let initial_value = int_field(5, 0)? as i32;
    let checksum = int_field(6, 0)? as i32;
    let block_size = int_field(7, 0)? as u32;
    let description = if fields.len() > 8 {
        fields[8..].join(" ")
    } else {
        String::new()
    };
    Ok(SignalSpec {
        file_name: fields[0].to_string(),
        format,
        byte_offset,
        gain,
        baseline: baseline.unwrap_or(adc_zero),
        units,
        adc_resolution,
        adc_zero,
        initial_value,
        checksum,
        block_size,
        description,
    })
}

/// Multiplier that converts a signal's physical unit into millivolts.
pub fn millivolt_scale(units: &str) -> f64 {
    match units.trim() {
        "uV" | "µV" | "microvolts" => 1e-3,
        "V" | "volts" => 1e3,
        _ => 1.0,
    }
}

/// Decoded record: one `Vec<f64>` per header signal, in physical units
/// converted to millivolts. Invalid ADC samples become NaN.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub header: Header,
    pub signals: Vec<Vec<f64>>,
}

/// Reads a record given the path of its `.hea` file (or the path without
/// extension).
pub fn read_record(path: &Path) -> Result<RawRecord> {
    let header_path = header_path(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header = parse_header(&text, &header_path)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));

    // Signals sharing a file are interleaved frame by frame in header order.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in header.signals.iter().enumerate() {
        match groups.iter_mut().find(|(f, _)| *f == s.file_name) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((s.file_name.clone(), vec![i])),
        }
    }

    let mut signals = vec![Vec::new(); header.signals.len()];
    for (file, members) in &groups {
        let first = &header.signals[members[0]];
        if members
            .iter()
            .any(|&m| header.signals[m].format != first.format)
        {
            return Err(ingestion(&header_path, format!("mixed formats in {file}")));
        }
        let data_path = dir.join(file);
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        let start = first.byte_offset as usize;
        if start > bytes.len() {
            return Err(ingestion(&data_path, "byte offset beyond end of file"));
        }
        let adc = decode(first.format, &bytes[start..]);
        let width = members.len();
        let mut frames = adc.len() / width;
        if let Some(n) = header.num_samples {
            if n > frames {
                return Err(ingestion(
                    &data_path,
                    format!("header declares {n} samples but file holds {frames}"),
                ));
            }
            frames = n;
        }
        let invalid = first.format.invalid_value();
        for (col, &sig) in members.iter().enumerate() {
            let spec = &header.signals[sig];
            let scale = millivolt_scale(&spec.units);
            signals[sig] = (0..frames)
                .map(|t| {
                    let v = adc[t * width + col];
                    if v == invalid {
                        f64::NAN
                    } else {
                        (v - spec.baseline) as f64 / spec.gain * scale
                    }
                })
                .collect();
        }
    }
    Ok(RawRecord { header, signals })
}

pub fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "hea") {
        path.to_path_buf()
    } else {
        let mut p = path.as_os_str().to_owned();
        p.push(".hea");
        PathBuf::from(p)
    }
}

fn decode(format: SignalFormat, bytes: &[u8]) -> Vec<i32> {
    match format {
        SignalFormat::Format80 => bytes.iter().map(|&b| b as i32 - 128).collect(),
        SignalFormat::Format16 => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
            .collect(),
        SignalFormat::Format61 => bytes
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as i32)
            .collect(),
        SignalFormat::Format160 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as i32 - 32768)
            .collect(),
        SignalFormat::Format212 => {
            let mut out = Vec::with_capacity(bytes.len() * 2 / 3 + 1);
            for c in bytes.chunks(3) {
                if c.len() >= 2 {
                    let s0 = (c[0] as i32) | (((c[1] & 0x0f) as i32) << 8);
                    out.push(sign_extend(s0, 12));
                }
                if c.len() == 3 {
                    let s1 = (c[2] as i32) | (((c[1] & 0xf0) as i32) << 4);
                    out.push(sign_extend(s1, 12));
                }
            }
            out
        }
        SignalFormat::Format24 => bytes
            .chunks_exact(3)
            .map(|c| sign_extend(c[0] as i32 | (c[1] as i32) << 8 | (c[2] as i32) << 16, 24))
            .collect(),
        SignalFormat::Format32 => bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    }
}

#[inline]
fn sign_extend(v: i32, bits: u32) -> i32 {
    let shift = 32 - bits;
    (v << shift) >> shift
}

/// Signals to write with [`write_record`].
pub struct WriteSpec<'a> {
    pub record_name: &'a str,
    pub sampling_frequency: u32,
    pub format: SignalFormat,
    pub gain: f64,
    pub names: &'a [&'a str],
    /// One slice per signal, millivolts. NaN is written as the invalid value.
    pub signals: &'a [Vec<f64>],
    pub comments: &'a [(&'a str, &'a str)],
}

/// Writes a single-file record (`<name>.hea` + `<name>.dat`) into `dir`.
/// Only formats 16 and 212 are supported for writing.
pub fn write_record(dir: &Path, spec: &WriteSpec<'_>) -> Result<PathBuf> {
    let n_sig = spec.signals.len();
    if n_sig == 0 || spec.names.len() != n_sig {
        return Err(Error::Shape("names and signals must match and be non-empty".into()));
    }
    let n = spec.signals[0].len();
    if spec.signals.iter().any(|s| s.len() != n) {
        return Err(Error::Shape("all signals must have equal length".into()));
    }
    let (lo, hi) = match spec.format {
        SignalFormat::Format16 => (-32767, 32767),
        SignalFormat::Format212 => (-2047, 2047),
        other => {
            return Err(Error::Shape(format!(
                "writing format {} is not supported",
                other.code()
            )))
        }
    };
    let invalid = spec.format.invalid_value();
    let mut adc = Vec::with_capacity(n * n_sig);
    for t in 0..n {
        for s in spec.signals {
            let v = s[t];
            adc.push(if v.is_finite() {
                ((v * spec.gain).round() as i64).clamp(lo, hi) as i32
            } else {
                invalid
            });
        }
    }
    let mut bytes = Vec::new();
    match spec.format {
        SignalFormat::Format16 => {
            for v in &adc {
                bytes.extend_from_slice(&(*v as i16).to_le_bytes());
            }
        }
        _ => {
            for pair in adc.chunks(2) {
                let a = pair[0] & 0xfff;
                let b = pair.get(1).map_or(0, |v| v & 0xfff);
                bytes.push((a & 0xff) as u8);
                bytes.push(((a >> 8) | ((b >> 8) << 4)) as u8);
                if pair.len() == 2 {
                    bytes.push((b & 0xff) as u8);
                }
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dat_name = format!("{}.dat", spec.record_name);
    let dat_path = dir.join(&dat_name);
    fs::write(&dat_path, &bytes).map_err(|e| Error::io(&dat_path, e))?;

    let mut hea = format!(
        "{} {} {} {}\n",
        spec.record_name, n_sig, spec.sampling_frequency, n
    );
    for (i, name) in spec.names.iter().enumerate() {
        let first = adc.get(i).copied().unwrap_or(0);
        hea.push_str(&format!(
            "{dat_name} {} {}(0)/mV {} 0 {first} 0 0 {name}\n",
            spec.format.code(),
            spec.gain,
            if spec.format == SignalFormat::Format16 { 16 } else { 12 },
        ));
    }
    for (k, v) in spec.comments {
        hea.push_str(&format!("# {k}: {v}\n"));
    }
    let hea_path = dir.join(format!("{}.hea", spec.record_name));
    fs::write(&hea_path, hea).map_err(|e| Error::io(&hea_path, e))?;
    Ok(hea_path)
}

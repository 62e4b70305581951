//! Versioned checkpoint files.
//!
//! Layout: `"ECGCKPT\0"`, u32 format version, u64 header length, JSON
//! header, then little-endian `f64` blocks (parameters, batch-norm buffers,
//! Adam first and second moments), then a SHA-256 of everything before it.
//! A human-readable `<file>.json` sidecar repeats the header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamWState, EpochRecord, Standardizer, TrainConfig};
use crate::error::{Error, Result};
use crate::experiments::ExperimentSpec;
use crate::model::{UNet, UNetConfig};
use crate::PIPELINE_VERSION;

const MAGIC: &[u8; 8] = b"ECGCKPT\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: UNet,
    pub optimizer: AdamWState,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub train_config: TrainConfig,
    pub spec: ExperimentSpec,
    pub standardizer: Option<Standardizer>,
    pub pipeline_version: String,
}

impl Checkpoint {
    /// Validation MSE recorded for the checkpoint's epoch.
    pub fn recorded_val_mse(&self) -> Option<f64> {
        self.history
            .iter()
            .find(|h| h.epoch == self.epoch)
            .and_then(|h| h.val_mse)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    pipeline_version: String,
    model_config: UNetConfig,
    train_config: TrainConfig,
    spec: ExperimentSpec,
    epoch: usize,
    history: Vec<EpochRecord>,
    standardizer: Option<Standardizer>,
    adam_step: u64,
    num_params: usize,
    num_buffers: usize,
    num_moments: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn push_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let params = ckpt.model.flat_params();
    let buffers: Vec<f64> = ckpt.model.buffers().into_iter().flatten().copied().collect();
    let header = Header {
        pipeline_version: ckpt.pipeline_version.clone(),
        model_config: ckpt.model.config().clone(),
        train_config: ckpt.train_config.clone(),
        spec: ckpt.spec.clone(),
        epoch: ckpt.epoch,
        history: ckpt.history.clone(),
        standardizer: ckpt.standardizer.clone(),
        adam_step: ckpt.optimizer.step,
        num_params: params.len(),
        num_buffers: buffers.len(),
        num_moments: ckpt.optimizer.m.len(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(32 + header_json.len() + 8 * (params.len() * 3 + buffers.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    push_f64s(&mut buf, params);
    push_f64s(&mut buf, buffers);
    push_f64s(&mut buf, ckpt.optimizer.m.iter().copied());
    push_f64s(&mut buf, ckpt.optimizer.v.iter().copied());
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unknown format version {version}")));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length out of range"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    if header.pipeline_version != PIPELINE_VERSION {
        return Err(Error::IncompatibleVersion {
            path: path.to_path_buf(),
            found: header.pipeline_version,
            expected: PIPELINE_VERSION.to_string(),
        });
    }

    let values: Vec<f64> = body[header_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected = header.num_params + header.num_buffers + 2 * header.num_moments;
    if values.len() != expected || (body.len() - header_end) % 8 != 0 {
        return Err(corrupt("tensor payload has the wrong size"));
    }

    let mut model = UNet::new(header.model_config.clone(), 0)?;
    let (params, rest) = values.split_at(header.num_params);
    let (buffers, rest) = rest.split_at(header.num_buffers);
    let (m, v) = rest.split_at(header.num_moments);
    model.set_flat_params(params).map_err(|_| corrupt("parameter count mismatch"))?;
    let mut offset = 0;
    for b in model.buffers_mut() {
        let n = b.len();
        if offset + n > buffers.len() {
            return Err(corrupt("buffer count mismatch"));
        }
        b.copy_from_slice(&buffers[offset..offset + n]);
        offset += n;
    }
    if offset != buffers.len() {
        return Err(corrupt("buffer count mismatch"));
    }
    Ok(Checkpoint {
        model,
        optimizer: AdamWState {
            step: header.adam_step,
            m: m.to_vec(),
            v: v.to_vec(),
        },
        epoch: header.epoch,
        history: header.history,
        train_config: header.train_config,
        spec: header.spec,
        standardizer: header.standardizer,
        pipeline_version: header.pipeline_version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UNetConfig;
    use crate::training::{evaluate_loss, train};
    use crate::synth::{synthetic_windows, SynthConfig};
    use ndarray::Array3;

    fn trained() -> Checkpoint {
        let spec: ExperimentSpec = "I+II".parse().unwrap();
        let w = synthetic_windows(&SynthConfig { len: 64, ..Default::default() }, 6, 3);
        let model = UNet::new(UNetConfig::new(2, 6).with_width(4, 2), 2).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 3, ..Default::default() };
        train(model, &w[..4], &w[4..], &spec, &cfg, |_| {}).unwrap().last
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = trained();
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.flat_params(), ckpt.model.flat_params());
        assert_eq!(back.model.buffers(), ckpt.model.buffers());
        assert_eq!(back.optimizer, ckpt.optimizer);
        assert_eq!(back.history, ckpt.history);
        let x = Array3::from_shape_fn((2, 2, 64), |(a, b, c)| ((a + 2 * b + c) as f64 * 0.1).sin());
        let y1 = ckpt.model.forward(x.view()).unwrap();
        let y2 = back.model.forward(x.view()).unwrap();
        assert_eq!(y1, y2);

        let val = synthetic_windows(&SynthConfig { len: 64, ..Default::default() }, 6, 3);
        let recorded = back.recorded_val_mse().unwrap();
        let again = evaluate_loss(&back.model, &val[4..], &back.spec, back.standardizer.as_ref(), 3)
            .unwrap()
            .unwrap();
        assert!(((again - recorded) / recorded).abs() < 1e-6);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&trained(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint { .. })));
    }

    #[test]
    fn other_pipeline_version_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ckpt = trained();
        ckpt.pipeline_version = "leadrecon-0.0.0-other".into();
        save_checkpoint(&ckpt, &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::IncompatibleVersion { .. })));
    }
}

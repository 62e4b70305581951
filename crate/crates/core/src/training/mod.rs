//! MSE training of a U-net on (input leads → output leads) window pairs.

pub mod checkpoint;
pub mod optim;

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::SegmentWindow;
use crate::error::{Error, Result};
use crate::experiments::ExperimentSpec;
use crate::leads::{LeadLabel, NUM_LEADS};
use crate::metrics::{mse_grad, mse_loss};
use crate::model::UNet;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{AdamW, AdamWParams, AdamWState};

/// Training protocol. Defaults: 100 epochs of AdamW at 3e-4, batch 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Standardise each lead with training-set statistics.
    pub standardize: bool,
    /// When set, `train` writes `last.ckpt` and `best.ckpt` here.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWParams::default();
        Self {
            epochs: 100,
            learning_rate: adam.learning_rate,
            batch_size: 32,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            seed: 0,
            standardize: false,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamWParams {
        AdamWParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Optimizer steps in one epoch over `n` windows (last batch kept).
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Per-lead affine normalisation fitted on the training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(windows: &[SegmentWindow]) -> Self {
        let mut mean = vec![0.0; NUM_LEADS];
        let mut sq = [0.0; NUM_LEADS];
        let mut n = 0usize;
        for w in windows {
            for (lead, row) in w.signals.rows().into_iter().enumerate() {
                for &v in row {
                    mean[lead] += v as f64;
                    sq[lead] += (v as f64) * (v as f64);
                }
            }
            n += w.signals.ncols();
        }
        let n = n.max(1) as f64;
        let std = (0..NUM_LEADS)
            .map(|l| {
                let m = mean[l] / n;
                let var = (sq[l] / n - m * m).max(0.0);
                if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 }
            })
            .collect();
        mean.iter_mut().for_each(|m| *m /= n);
        Self { mean, std }
    }

    pub fn forward(&self, lead: LeadLabel, v: f64) -> f64 {
        (v - self.mean[lead.index()]) / self.std[lead.index()]
    }

    pub fn inverse(&self, lead: LeadLabel, v: f64) -> f64 {
        v * self.std[lead.index()] + self.mean[lead.index()]
    }
}

/// Stacks the given leads of several windows into a `(batch, leads, len)`
/// tensor, optionally standardised.
pub fn gather(windows: &[&SegmentWindow], leads: &[LeadLabel], norm: Option<&Standardizer>) -> Array3<f64> {
    let len = windows.first().map_or(0, |w| w.signals.ncols());
    let mut out = Array3::<f64>::zeros((windows.len(), leads.len(), len));
    for (b, w) in windows.iter().enumerate() {
        for (c, lead) in leads.iter().enumerate() {
            let src = w.signals.row(lead.index());
            let mut dst = out.slice_mut(s![b, c, ..]);
            match norm {
                Some(n) => dst.iter_mut().zip(src).for_each(|(d, v)| *d = n.forward(*lead, *v as f64)),
                None => dst.iter_mut().zip(src).for_each(|(d, v)| *d = *v as f64),
            }
        }
    }
    out
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
}

fn check_compatible(model: &UNet, spec: &ExperimentSpec) -> Result<()> {
    if spec.input_leads.iter().any(|l| spec.output_leads.contains(l)) {
        return Err(Error::InvalidExperiment(format!(
            "{}: input and output leads overlap",
            spec.experiment_id
        )));
    }
    let cfg = model.config();
    if cfg.ch_in != spec.ch_in() || cfg.ch_out != spec.ch_out() {
        return Err(Error::Shape(format!(
            "model maps {}→{} channels but {} needs {}→{}",
            cfg.ch_in,
            cfg.ch_out,
            spec.experiment_id,
            spec.ch_in(),
            spec.ch_out()
        )));
    }
    Ok(())
}

/// Inference-mode MSE over `windows` (mean over all elements), computed in
/// the model's (possibly standardised) space.
pub fn evaluate_loss(
    model: &UNet,
    windows: &[SegmentWindow],
    spec: &ExperimentSpec,
    norm: Option<&Standardizer>,
    batch_size: usize,
) -> Result<Option<f64>> {
    if windows.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&SegmentWindow> = windows.iter().collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in refs.chunks(batch_size.max(1)) {
        let x = gather(chunk, &spec.input_leads, norm);
        let y = gather(chunk, &spec.output_leads, norm);
        let pred = model.forward(x.view())?;
        sum += mse_loss(pred.view(), y.view())? * y.len() as f64;
        count += y.len();
    }
    Ok(Some(sum / count as f64))
}

/// Trains `model` for `config.epochs` epochs.
///
/// Windows are reshuffled every epoch from a ChaCha8 stream keyed by
/// `(config.seed, epoch)`; the last partial batch is kept. After each epoch
/// the sample-weighted training MSE and the inference-mode validation MSE
/// are recorded and passed to `on_epoch`.
pub fn train(
    mut model: UNet,
    train_windows: &[SegmentWindow],
    val_windows: &[SegmentWindow],
    spec: &ExperimentSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    check_compatible(&model, spec)?;
    if train_windows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let norm = config.standardize.then(|| Standardizer::fit(train_windows));
    let mut opt = AdamW::new(config.adam(), model.num_params());
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    let snapshot = |model: &UNet, opt: &AdamW, epoch: usize, history: &[EpochRecord]| Checkpoint {
        model: model.clone(),
        optimizer: opt.state.clone(),
        epoch,
        history: history.to_vec(),
        train_config: config.clone(),
        spec: spec.clone(),
        standardizer: norm.clone(),
        pipeline_version: crate::PIPELINE_VERSION.to_string(),
    };

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut weighted = 0.0;
        for (batch_idx, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SegmentWindow> = idx.iter().map(|&i| &train_windows[i]).collect();
            let x = gather(&batch, &spec.input_leads, norm.as_ref());
            let y = gather(&batch, &spec.output_leads, norm.as_ref());
            model.zero_grad();
            let pred = model.forward_train(x)?;
            let loss = mse_loss(pred.view(), y.view())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            let grad = mse_grad(pred.view(), y.view());
            model.backward(&grad);
            opt.step(&mut model);
            weighted += loss * batch.len() as f64;
        }
        let train_mse = weighted / train_windows.len() as f64;
        let val_mse = evaluate_loss(&model, val_windows, spec, norm.as_ref(), config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        let score = val_mse.unwrap_or(train_mse);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, snapshot(&model, &opt, epoch, &history)));
        }
    }

    let last = snapshot(&model, &opt, config.epochs, &history);
    let best = match best {
        Some((_, mut b)) => {
            b.history = history.clone();
            b
        }
        None => last.clone(),
    };
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&last, &dir.join("last.ckpt"))?;
        save_checkpoint(&best, &dir.join("best.ckpt"))?;
    }
    Ok(TrainOutcome { last, best })
}

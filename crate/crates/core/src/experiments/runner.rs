//! End-to-end execution of experiments: train, evaluate, persist, report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, Selection};
use super::spec::{ExperimentGroup, ExperimentSpec, TableGroup};
use crate::dataio::store::{ProcessedData, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_information_table, evaluate_experiment, rank_leads, ranking_csv, read_segments_jsonl,
    write_segments_jsonl, EvaluationReport, LeadMetrics, MetricsTable,
};
use crate::exec;
use crate::leads::LeadLabel;
use crate::model::{UNet, UNetConfig};
use crate::training::{load_checkpoint, train, Checkpoint, EpochRecord, TrainConfig};
use crate::PIPELINE_VERSION;

pub const RUN_MANIFEST: &str = "manifest.json";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const TIMING_FILE: &str = "timing.json";
pub const TABLES_DIR: &str = "tables";
pub const RANKING_FILE: &str = "ranking.csv";

/// Where one experiment's artifacts live: `<out>/<experiment_id>/`.
#[derive(Debug, Clone)]
pub struct ExperimentDir(pub PathBuf);

impl ExperimentDir {
    pub fn new(out_dir: &Path, spec: &ExperimentSpec) -> Self {
        Self(out_dir.join(&spec.experiment_id))
    }
    pub fn manifest(&self) -> PathBuf {
        self.0.join(RUN_MANIFEST)
    }
    pub fn checkpoint(&self, selection: Selection) -> PathBuf {
        self.0.join(match selection {
            Selection::Last => LAST_CKPT,
            Selection::Best => BEST_CKPT,
        })
    }
    pub fn segments(&self) -> PathBuf {
        self.0.join(SEGMENTS_FILE)
    }
    pub fn epoch_log(&self) -> PathBuf {
        self.0.join(EPOCH_LOG)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSummary {
    pub lead: LeadLabel,
    pub mean_pcc: Option<f64>,
    pub median_pcc: Option<f64>,
    pub mean_mse: f64,
    pub undefined_count: usize,
}

impl From<&LeadMetrics> for LeadSummary {
    fn from(m: &LeadMetrics) -> Self {
        Self {
            lead: m.lead,
            mean_pcc: m.mean_pcc,
            median_pcc: m.median_pcc,
            mean_mse: m.mean_mse,
            undefined_count: m.undefined_count,
        }
    }
}

/// Written last; its presence marks the experiment complete. Wall-clock
/// time lives in `timing.json` so reruns produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub pipeline_version: String,
    pub experiment_id: String,
    pub spec: ExperimentSpec,
    pub global_seed: u64,
    pub derived_seed: u64,
    pub model: UNetConfig,
    pub num_params: usize,
    pub train: TrainConfig,
    /// Fields of `train` that differ from the default protocol.
    pub overrides: Vec<String>,
    pub selection: Selection,
    pub dataset_manifest_sha256: String,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub final_train_mse: f64,
    pub final_val_mse: Option<f64>,
    pub timing_file: String,
    pub leads: Vec<LeadSummary>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn overrides(train: &TrainConfig) -> Vec<String> {
    let d = serde_json::to_value(TrainConfig::default()).unwrap_or_default();
    let t = serde_json::to_value(train).unwrap_or_default();
    match (d, t) {
        (serde_json::Value::Object(d), serde_json::Value::Object(t)) => t
            .iter()
            .filter(|(k, v)| d.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k}={v}"))
            .collect(),
        _ => Vec::new(),
    }
}

/// Inputs shared by every experiment of a run.
pub struct RunContext<'a> {
    pub data: &'a ProcessedData,
    pub dataset_sha256: String,
    pub config: &'a RunConfig,
}

impl<'a> RunContext<'a> {
    pub fn new(data: &'a ProcessedData, data_dir: &Path, config: &'a RunConfig) -> Result<Self> {
        let path = data_dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            data,
            dataset_sha256: format!("{:x}", Sha256::digest(&bytes)),
            config,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub report: EvaluationReport,
}

/// Trains and evaluates one spec and writes its directory.
pub fn run_experiment(spec: &ExperimentSpec, ctx: &RunContext<'_>) -> Result<ExperimentOutcome> {
    run_experiment_inner(spec, ctx).map_err(|e| e.in_experiment(&spec.experiment_id))
}

fn run_experiment_inner(spec: &ExperimentSpec, ctx: &RunContext<'_>) -> Result<ExperimentOutcome> {
    let cfg = ctx.config;
    let dir = ExperimentDir::new(&cfg.out_dir, spec);
    fs::create_dir_all(&dir.0).map_err(|e| Error::io(&dir.0, e))?;
    let _ = fs::remove_file(dir.manifest());
    if ctx.data.test.is_empty() {
        return Err(Error::Config("processed dataset has no test windows".into()));
    }

    let seed = spec.derived_seed(cfg.seed);
    let model = UNet::new(cfg.model_config(spec.ch_in(), spec.ch_out()), seed)?;
    let num_params = model.num_params();
    let train_cfg = TrainConfig {
        seed,
        checkpoint_dir: Some(dir.0.clone()),
        ..cfg.train.clone()
    };

    let log_path = dir.epoch_log();
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_err = None;
    let start = Instant::now();
    info!("{}: training {} params on {} windows", spec, num_params, ctx.data.train.len());
    let outcome = train(model, &ctx.data.train, &ctx.data.val, spec, &train_cfg, |r: &EpochRecord| {
        info!(
            "{spec}: epoch {} train_mse {:.6} val_mse {}",
            r.epoch,
            r.train_mse,
            r.val_mse.map_or("-".into(), |v| format!("{v:.6}"))
        );
        let line = serde_json::to_string(r).expect("epoch record serialises");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let train_time = start.elapsed().as_secs_f64();

    let chosen: &Checkpoint = match cfg.selection {
        Selection::Last => &outcome.last,
        Selection::Best => &outcome.best,
    };
    let report = evaluate_experiment(chosen, spec, &ctx.data.test)?;
    write_segments_jsonl(&report, &dir.segments())?;
    let eval_time = start.elapsed().as_secs_f64() - train_time;

    let last = outcome.last.history.last();
    let mut recorded_train = train_cfg.clone();
    recorded_train.checkpoint_dir = None;
    let manifest = RunManifest {
        pipeline_version: PIPELINE_VERSION.to_string(),
        experiment_id: spec.experiment_id.clone(),
        spec: spec.clone(),
        global_seed: cfg.seed,
        derived_seed: seed,
        model: outcome.last.model.config().clone(),
        num_params,
        overrides: overrides(&TrainConfig { seed: 0, ..recorded_train.clone() }),
        train: recorded_train,
        selection: cfg.selection,
        dataset_manifest_sha256: ctx.dataset_sha256.clone(),
        train_windows: ctx.data.train.len(),
        val_windows: ctx.data.val.len(),
        test_windows: ctx.data.test.len(),
        final_train_mse: last.map_or(f64::NAN, |h| h.train_mse),
        final_val_mse: last.and_then(|h| h.val_mse),
        timing_file: TIMING_FILE.to_string(),
        leads: report.leads.iter().map(LeadSummary::from).collect(),
    };
    write_json(
        &dir.0.join(TIMING_FILE),
        &serde_json::json!({ "train_seconds": train_time, "eval_seconds": eval_time }),
    )?;
    write_json(&dir.manifest(), &manifest)?;
    Ok(ExperimentOutcome { manifest, report })
}

/// Loads a completed experiment, or `None` if it has not finished under
/// the current pipeline version.
pub fn load_completed(out_dir: &Path, spec: &ExperimentSpec) -> Result<Option<ExperimentOutcome>> {
    let dir = ExperimentDir::new(out_dir, spec);
    if !dir.manifest().exists() || !dir.segments().exists() {
        return Ok(None);
    }
    let manifest = RunManifest::read(&dir.manifest())?;
    if manifest.pipeline_version != PIPELINE_VERSION || manifest.spec != *spec {
        return Ok(None);
    }
    let report = read_segments_jsonl(&dir.segments())?;
    Ok(Some(ExperimentOutcome { manifest, report }))
}

/// Re-evaluates a stored checkpoint against `test` and rewrites the
/// per-segment file.
pub fn reevaluate(out_dir: &Path, spec: &ExperimentSpec, selection: Selection, test: &[crate::dataio::SegmentWindow]) -> Result<EvaluationReport> {
    let dir = ExperimentDir::new(out_dir, spec);
    let ckpt = load_checkpoint(&dir.checkpoint(selection))?;
    let report = evaluate_experiment(&ckpt, spec, test).map_err(|e| e.in_experiment(&spec.experiment_id))?;
    write_segments_jsonl(&report, &dir.segments())?;
    Ok(report)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReportSummary {
    /// `(table name, csv path, rows)`
    pub tables: Vec<(String, PathBuf, usize)>,
    pub ranking: Option<Vec<(LeadLabel, f64)>>,
    pub warnings: Vec<String>,
}

/// Collects every completed experiment under `out_dir` and writes both
/// group tables and the lead ranking to `<out_dir>/tables/`.
pub fn write_report(out_dir: &Path) -> Result<ReportSummary> {
    let registry = super::spec::enumerate_lead_configs();
    let mut metrics: Vec<LeadMetrics> = Vec::new();
    for spec in registry.specs() {
        if let Some(done) = load_completed(out_dir, spec)? {
            metrics.extend(done.report.leads);
        }
    }
    if metrics.is_empty() {
        return Err(Error::Config(format!(
            "no completed experiments under {}",
            out_dir.display()
        )));
    }
    let tables_dir = out_dir.join(TABLES_DIR);
    fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;
    let mut summary = ReportSummary::default();
    for group in TableGroup::ALL {
        let table = match build_information_table(group, &metrics) {
            Ok(t) => t,
            Err(Error::MissingExperiments { missing, .. }) => {
                let members: Vec<String> = registry
                    .table_group(group)
                    .iter()
                    .map(|s| s.experiment_id.clone())
                    .collect();
                let present: Vec<LeadMetrics> = members
                    .iter()
                    .flat_map(|id| metrics.iter().filter(move |m| &m.experiment_id == id).cloned())
                    .collect();
                if present.is_empty() {
                    summary.warnings.push(format!("{}: no completed experiments", group.name()));
                    continue;
                }
                let msg = format!("{}: partial table, missing {}", group.name(), missing.join(", "));
                warn!("{msg}");
                summary.warnings.push(msg);
                MetricsTable::from_metrics(group.name(), &present)
            }
            Err(e) => return Err(e),
        };
        let path = tables_dir.join(format!("{}.csv", group.name()));
        table.write_csv(&path)?;
        summary.tables.push((group.name().to_string(), path, table.rows.len()));
        if group == TableGroup::LimbAndOne {
            match rank_leads(&table) {
                Ok(r) => {
                    let p = tables_dir.join(RANKING_FILE);
                    fs::write(&p, ranking_csv(&r)).map_err(|e| Error::io(&p, e))?;
                    summary.ranking = Some(r);
                }
                Err(e) => summary.warnings.push(format!("{} ranking unavailable: {e}", ExperimentGroup::PairPlusOne.name())),
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub trained: Vec<String>,
    pub skipped: Vec<String>,
    /// `(experiment_id, error)`
    pub failed: Vec<(String, String)>,
    pub report: Option<ReportSummary>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Runs `specs` with up to `parallelism` experiments at once. Completed
/// experiments are skipped unless `config.force`; a failure is recorded and
/// the remaining experiments still run.
pub fn run_all(specs: &[ExperimentSpec], ctx: &RunContext<'_>, parallelism: usize) -> RunSummary {
    let out_dir = &ctx.config.out_dir;
    let results = exec::run_queue(specs.len(), parallelism.max(1), |i| {
        let spec = &specs[i];
        if !ctx.config.force {
            match load_completed(out_dir, spec) {
                Ok(Some(_)) => return (spec.experiment_id.clone(), Ok(false)),
                Ok(None) => {}
                Err(e) => warn!("{spec}: ignoring unreadable previous run: {e}"),
            }
        }
        (spec.experiment_id.clone(), run_experiment(spec, ctx).map(|_| true))
    });
    let mut summary = RunSummary::default();
    for (id, r) in results {
        match r {
            Ok(true) => summary.trained.push(id),
            Ok(false) => summary.skipped.push(id),
            Err(e) => {
                warn!("{e}");
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    match write_report(out_dir) {
        Ok(r) => summary.report = Some(r),
        Err(e) => warn!("report not written: {e}"),
    }
    summary
}

//! Per-lead scoring of reconstructions, group tables and lead ranking.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::dataio::{SegmentKey, SegmentWindow};
use crate::error::{Error, Result};
use crate::exec;
use crate::experiments::spec::{enumerate_lead_configs, ExperimentGroup, TableGroup};
use crate::experiments::ExperimentSpec;
use crate::leads::LeadLabel;
use crate::metrics::{mean, median, mse, pearson_cc};
use crate::model::UNet;
use crate::training::{gather, Checkpoint};

/// Windows per forward pass during evaluation.
pub const EVAL_BATCH: usize = 16;

/// Anything that maps a batch of windows to the spec's output leads, in mV.
pub trait Reconstructor: Sync {
    fn reconstruct(&self, batch: &[&SegmentWindow], spec: &ExperimentSpec) -> Result<Array3<f64>>;
}

fn check_channels(ch_in: usize, ch_out: usize, spec: &ExperimentSpec) -> Result<()> {
    if ch_in != spec.ch_in() || ch_out != spec.ch_out() {
        return Err(Error::Shape(format!(
            "model maps {ch_in}→{ch_out} channels but {} needs {}→{}",
            spec.experiment_id,
            spec.ch_in(),
            spec.ch_out()
        )));
    }
    Ok(())
}

impl Reconstructor for UNet {
    fn reconstruct(&self, batch: &[&SegmentWindow], spec: &ExperimentSpec) -> Result<Array3<f64>> {
        check_channels(self.config().ch_in, self.config().ch_out, spec)?;
        self.forward(gather(batch, &spec.input_leads, None).view())
    }
}

/// Applies the checkpoint's standardiser (if any) around the model and
/// returns millivolts.
impl Reconstructor for Checkpoint {
    fn reconstruct(&self, batch: &[&SegmentWindow], spec: &ExperimentSpec) -> Result<Array3<f64>> {
        let cfg = self.model.config();
        check_channels(cfg.ch_in, cfg.ch_out, spec)?;
        let norm = self.standardizer.as_ref();
        let mut y = self.model.forward(gather(batch, &spec.input_leads, norm).view())?;
        if let Some(n) = norm {
            for (c, lead) in spec.output_leads.iter().enumerate() {
                y.slice_mut(s![.., c, ..]).mapv_inplace(|v| n.inverse(*lead, v));
            }
        }
        Ok(y)
    }
}

/// Scores for one reconstructed lead of one experiment over the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadMetrics {
    pub experiment_id: String,
    pub lead: LeadLabel,
    /// `None` where the correlation is undefined (flat segment).
    pub per_segment_pcc: Vec<Option<f64>>,
    pub per_segment_mse: Vec<f64>,
    pub mean_pcc: Option<f64>,
    pub median_pcc: Option<f64>,
    pub mean_mse: f64,
    pub undefined_count: usize,
}

impl LeadMetrics {
    pub fn from_segments(experiment_id: &str, lead: LeadLabel, pcc: Vec<Option<f64>>, mse: Vec<f64>) -> Self {
        let defined: Vec<f64> = pcc.iter().flatten().copied().collect();
        Self {
            experiment_id: experiment_id.to_string(),
            lead,
            mean_pcc: mean(&defined),
            median_pcc: median(&defined),
            mean_mse: mean(&mse).unwrap_or(0.0),
            undefined_count: pcc.len() - defined.len(),
            per_segment_pcc: pcc,
            per_segment_mse: mse,
        }
    }

    pub fn defined_pcc(&self) -> Vec<f64> {
        self.per_segment_pcc.iter().flatten().copied().collect()
    }
}

/// Evaluation of one experiment: segment keys and one [`LeadMetrics`] per
/// output lead, with per-segment lists aligned to `keys`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub experiment_id: String,
    pub keys: Vec<SegmentKey>,
    pub leads: Vec<LeadMetrics>,
}

impl EvaluationReport {
    /// Mean of all defined per-segment PCCs across every output lead.
    pub fn overall_mean_pcc(&self) -> Option<f64> {
        let all: Vec<f64> = self.leads.iter().flat_map(|l| l.defined_pcc()).collect();
        mean(&all)
    }

    pub fn segment_mean_pcc(&self, segment: usize) -> Option<f64> {
        let v: Vec<f64> = self.leads.iter().filter_map(|l| l.per_segment_pcc[segment]).collect();
        mean(&v)
    }

    /// The segment whose mean PCC is nearest the experiment's overall mean;
    /// ties go to the smaller segment key.
    pub fn typical_segment(&self) -> Option<usize> {
        let target = self.overall_mean_pcc()?;
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_by(|&a, &b| self.keys[a].cmp(&self.keys[b]));
        let mut best: Option<(f64, usize)> = None;
        for i in order {
            if let Some(m) = self.segment_mean_pcc(i) {
                let d = (m - target).abs();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn segment_index(&self, key: &SegmentKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }
}

/// Runs `model` over every test window and scores each output lead.
///
/// Batches are evaluated concurrently and merged in window order, so the
/// result does not depend on scheduling.
pub fn evaluate_experiment(
    model: &dyn Reconstructor,
    spec: &ExperimentSpec,
    windows: &[SegmentWindow],
) -> Result<EvaluationReport> {
    if windows.is_empty() {
        return Err(Error::Config(format!("{}: no test windows to evaluate", spec.experiment_id)));
    }
    let refs: Vec<&SegmentWindow> = windows.iter().collect();
    let chunks: Vec<&[&SegmentWindow]> = refs.chunks(EVAL_BATCH).collect();
    let scored = exec::map_slice(&chunks, |batch| -> Result<Vec<Vec<(Option<f64>, f64)>>> {
        let pred = model.reconstruct(batch, spec)?;
        let truth = gather(batch, &spec.output_leads, None);
        if pred.dim() != truth.dim() {
            return Err(Error::Shape(format!(
                "{}: reconstruction {:?} vs target {:?}",
                spec.experiment_id,
                pred.dim(),
                truth.dim()
            )));
        }
        let mut out = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let mut per_lead = Vec::with_capacity(spec.ch_out());
            for c in 0..spec.ch_out() {
                let p = pred.slice(s![b, c, ..]).to_vec();
                let t = truth.slice(s![b, c, ..]).to_vec();
                per_lead.push((pearson_cc(&p, &t)?, mse(&p, &t)?));
            }
            out.push(per_lead);
        }
        Ok(out)
    });

    let mut pcc = vec![Vec::with_capacity(windows.len()); spec.ch_out()];
    let mut err = vec![Vec::with_capacity(windows.len()); spec.ch_out()];
    for chunk in scored {
        for per_lead in chunk? {
            for (c, (r, e)) in per_lead.into_iter().enumerate() {
                pcc[c].push(r);
                err[c].push(e);
            }
        }
    }
    let leads = spec
        .output_leads
        .iter()
        .zip(pcc.into_iter().zip(err))
        .map(|(lead, (p, e))| LeadMetrics::from_segments(&spec.experiment_id, *lead, p, e))
        .collect();
    Ok(EvaluationReport {
        experiment_id: spec.experiment_id.clone(),
        keys: windows.iter().map(SegmentWindow::key).collect(),
        leads,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentLine {
    experiment_id: String,
    record_id: String,
    segment_index: usize,
    lead: LeadLabel,
    pcc: Option<f64>,
    mse: f64,
}

/// One JSON object per (segment, lead), segments in key order.
pub fn write_segments_jsonl(report: &EvaluationReport, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, key) in report.keys.iter().enumerate() {
        for l in &report.leads {
            let line = SegmentLine {
                experiment_id: report.experiment_id.clone(),
                record_id: key.record_id.clone(),
                segment_index: key.segment_index,
                lead: l.lead,
                pcc: l.per_segment_pcc[i],
                mse: l.per_segment_mse[i],
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_segments_jsonl`]; aggregates are recomputed.
pub fn read_segments_jsonl(path: &Path) -> Result<EvaluationReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut experiment_id = None;
    let mut keys: Vec<SegmentKey> = Vec::new();
    let mut per_lead: BTreeMap<LeadLabel, (Vec<Option<f64>>, Vec<f64>)> = BTreeMap::new();
    let mut lead_order: Vec<LeadLabel> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentLine = serde_json::from_str(&line)?;
        experiment_id.get_or_insert_with(|| rec.experiment_id.clone());
        let key = SegmentKey {
            record_id: rec.record_id,
            segment_index: rec.segment_index,
        };
        if keys.last() != Some(&key) {
            keys.push(key);
        }
        if !lead_order.contains(&rec.lead) {
            lead_order.push(rec.lead);
        }
        let e = per_lead.entry(rec.lead).or_default();
        e.0.push(rec.pcc);
        e.1.push(rec.mse);
    }
    let experiment_id = experiment_id.ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?;
    let leads = lead_order
        .into_iter()
        .map(|l| {
            let (p, m) = per_lead.remove(&l).unwrap_or_default();
            LeadMetrics::from_segments(&experiment_id, l, p, m)
        })
        .collect::<Vec<_>>();
    if leads.iter().any(|l| l.per_segment_pcc.len() != keys.len()) {
        return Err(Error::Config(format!("{}: ragged per-segment records", path.display())));
    }
    Ok(EvaluationReport {
        experiment_id,
        keys,
        leads,
    })
}

/// One row of an information table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub experiment_id: String,
    /// Mean PCC per V1..V6; `None` where the lead was an input.
    pub cells: [Option<f64>; 6],
    pub cell_mse: [Option<f64>; 6],
    /// Mean and median over every defined per-segment PCC of the row's
    /// output leads.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub mean_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub name: String,
    pub rows: Vec<TableRow>,
}

impl MetricsTable {
    /// One row per distinct experiment in `metrics`, in first-seen order.
    pub fn from_metrics(name: &str, metrics: &[LeadMetrics]) -> Self {
        let mut order: Vec<&str> = Vec::new();
        for m in metrics {
            if !order.contains(&m.experiment_id.as_str()) {
                order.push(&m.experiment_id);
            }
        }
        let rows = order
            .into_iter()
            .map(|id| {
                let mut cells = [None; 6];
                let mut cell_mse = [None; 6];
                let mut pooled = Vec::new();
                let mut mses = Vec::new();
                for m in metrics.iter().filter(|m| m.experiment_id == id) {
                    if let Some(k) = m.lead.precordial_index() {
                        cells[k] = m.mean_pcc.or(Some(f64::NAN));
                        cell_mse[k] = Some(m.mean_mse);
                    }
                    pooled.extend(m.defined_pcc());
                    mses.extend_from_slice(&m.per_segment_mse);
                }
                TableRow {
                    experiment_id: id.to_string(),
                    cells,
                    cell_mse,
                    mean: mean(&pooled),
                    median: median(&pooled),
                    mean_mse: mean(&mses),
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            rows,
        }
    }

    pub fn row(&self, experiment_id: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.experiment_id == experiment_id)
    }

    /// Delimited text: `experiment_id,V1,…,V6,mean,median`; input leads blank.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(["experiment_id", "V1", "V2", "V3", "V4", "V5", "V6", "mean", "median"])
            .map_err(csv_err)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.experiment_id.clone()];
            rec.extend(r.cells.iter().map(|c| fmt(*c)));
            rec.push(fmt(r.mean));
            rec.push(fmt(r.median));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Builds the table for one registry group. Every experiment of the group
/// must be present; rows follow registry order.
pub fn build_information_table(group: TableGroup, metrics: &[LeadMetrics]) -> Result<MetricsTable> {
    let registry = enumerate_lead_configs();
    let wanted: Vec<&ExperimentSpec> = registry.table_group(group);
    let missing: Vec<String> = wanted
        .iter()
        .filter(|s| !metrics.iter().any(|m| m.experiment_id == s.experiment_id))
        .map(|s| s.experiment_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingExperiments {
            group: group.name().to_string(),
            missing,
        });
    }
    let ordered: Vec<LeadMetrics> = wanted
        .iter()
        .flat_map(|s| metrics.iter().filter(|m| m.experiment_id == s.experiment_id).cloned())
        .collect();
    Ok(MetricsTable::from_metrics(group.name(), &ordered))
}

/// Ranks V1..V6 as inputs by the mean PCC of the `I+II+Vx` model's
/// reconstructions. Ties: lower mean MSE, then lead order.
pub fn rank_leads(table: &MetricsTable) -> Result<Vec<(LeadLabel, f64)>> {
    let registry = enumerate_lead_configs();
    let specs = registry.group(ExperimentGroup::PairPlusOne);
    let missing: Vec<String> = specs
        .iter()
        .filter(|s| table.row(&s.experiment_id).and_then(|r| r.mean).is_none())
        .map(|s| s.experiment_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingExperiments {
            group: ExperimentGroup::PairPlusOne.name().to_string(),
            missing,
        });
    }
    let mut scored: Vec<(LeadLabel, f64, f64)> = specs
        .iter()
        .map(|s| {
            let row = table.row(&s.experiment_id).expect("checked above");
            let lead = *s.input_leads.last().expect("pair-plus-one has a chest input");
            (lead, row.mean.unwrap(), row.mean_mse.unwrap_or(f64::INFINITY))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.2.total_cmp(&b.2))
            .then(a.0.cmp(&b.0))
    });
    Ok(scored.into_iter().map(|(l, s, _)| (l, s)).collect())
}

pub fn ranking_csv(ranking: &[(LeadLabel, f64)]) -> String {
    let mut s = String::from("rank,input_lead,mean_pcc\n");
    for (i, (l, v)) in ranking.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", i + 1, l, v));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_windows, SynthConfig};

    struct Identity;
    impl Reconstructor for Identity {
        fn reconstruct(&self, batch: &[&SegmentWindow], spec: &ExperimentSpec) -> Result<Array3<f64>> {
            Ok(gather(batch, &spec.output_leads, None))
        }
    }

    struct Zero;
    impl Reconstructor for Zero {
        fn reconstruct(&self, batch: &[&SegmentWindow], spec: &ExperimentSpec) -> Result<Array3<f64>> {
            Ok(Array3::zeros((batch.len(), spec.ch_out(), batch[0].signals.ncols())))
        }
    }

    fn windows(n: usize) -> Vec<SegmentWindow> {
        synthetic_windows(&SynthConfig { len: 128, ..Default::default() }, n, 5)
    }

    #[test]
    fn identity_oracle_is_perfect() {
        let spec: ExperimentSpec = "I+II".parse().unwrap();
        let rep = evaluate_experiment(&Identity, &spec, &windows(20)).unwrap();
        assert_eq!(rep.leads.len(), 6);
        for l in &rep.leads {
            assert!((l.mean_pcc.unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(l.mean_mse, 0.0);
            assert_eq!(l.per_segment_pcc.len(), 20);
        }
    }

    #[test]
    fn zero_oracle_is_undefined_with_energy_mse() {
        let spec: ExperimentSpec = "I+II+V3".parse().unwrap();
        let w = windows(5);
        let rep = evaluate_experiment(&Zero, &spec, &w).unwrap();
        for l in &rep.leads {
            assert_eq!(l.undefined_count, 5);
            assert_eq!(l.mean_pcc, None);
            let energy: f64 = w
                .iter()
                .map(|w| w.signals.row(l.lead.index()).iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / 128.0)
                .sum::<f64>()
                / 5.0;
            assert!((l.mean_mse - energy).abs() < 1e-12 * energy.max(1.0));
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let spec: ExperimentSpec = "I+II".parse().unwrap();
        let m = UNet::new(crate::model::UNetConfig::new(3, 6).with_width(2, 1), 0).unwrap();
        assert!(evaluate_experiment(&m, &spec, &windows(2)).is_err());
    }

    #[test]
    fn jsonl_round_trip_preserves_aggregates() {
        let spec: ExperimentSpec = "I".parse().unwrap();
        let m = UNet::new(crate::model::UNetConfig::new(1, 6).with_width(2, 1), 0).unwrap();
        let rep = evaluate_experiment(&m, &spec, &windows(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        write_segments_jsonl(&rep, &p).unwrap();
        assert_eq!(read_segments_jsonl(&p).unwrap(), rep);
    }

    fn fake(id: &str, lead: LeadLabel, pcc: f64, mse: f64) -> LeadMetrics {
        LeadMetrics::from_segments(id, lead, vec![Some(pcc), Some(pcc)], vec![mse, mse])
    }

    fn fake_group(score: impl Fn(LeadLabel) -> f64) -> Vec<LeadMetrics> {
        let r = enumerate_lead_configs();
        r.specs()
            .iter()
            .flat_map(|s| {
                let x = *s.input_leads.last().unwrap();
                s.output_leads.iter().map(move |o| (s.experiment_id.clone(), *o, x)).collect::<Vec<_>>()
            })
            .map(|(id, o, x)| fake(&id, o, score(x), 0.1))
            .collect()
    }

    #[test]
    fn tables_have_expected_shape() {
        let all = fake_group(|_| 0.5);
        let t1 = build_information_table(TableGroup::LimbAndOne, &all).unwrap();
        assert_eq!(t1.rows.len(), 10);
        let t2 = build_information_table(TableGroup::PairPlusTwo, &all).unwrap();
        assert_eq!(t2.rows.len(), 15);
        for r in &t2.rows {
            assert_eq!(r.cells.iter().filter(|c| c.is_some()).count(), 4);
        }
        let csv = t1.to_csv().unwrap();
        assert!(csv.starts_with("experiment_id,V1,V2,V3,V4,V5,V6,mean,median\n"));
        assert!(csv.contains("I+II+V3,0.5,0.5,,0.5,0.5,0.5,0.5,0.5\n"));

        let single: Vec<LeadMetrics> = all.iter().filter(|m| m.experiment_id == "II").cloned().collect();
        let t = MetricsTable::from_metrics("one", &single);
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].cells.iter().all(Option::is_some));
    }

    #[test]
    fn missing_experiments_are_listed() {
        let all: Vec<LeadMetrics> = fake_group(|_| 0.5).into_iter().filter(|m| m.experiment_id != "III").collect();
        match build_information_table(TableGroup::LimbAndOne, &all) {
            Err(Error::MissingExperiments { missing, .. }) => assert_eq!(missing, vec!["III".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ranking_and_tie_break() {
        let dominated = fake_group(|x| if x == LeadLabel::V3 { 0.9 } else { 0.4 });
        let t = build_information_table(TableGroup::LimbAndOne, &dominated).unwrap();
        assert_eq!(rank_leads(&t).unwrap()[0].0, LeadLabel::V3);

        let flat = build_information_table(TableGroup::LimbAndOne, &fake_group(|_| 0.7)).unwrap();
        let order: Vec<LeadLabel> = rank_leads(&flat).unwrap().into_iter().map(|r| r.0).collect();
        assert_eq!(order, LeadLabel::PRECORDIAL.to_vec());

        let partial = MetricsTable { name: "x".into(), rows: t.rows[..5].to_vec() };
        assert!(rank_leads(&partial).is_err());
    }

    #[test]
    fn typical_segment_is_nearest_to_mean() {
        let keys: Vec<SegmentKey> = (0..3)
            .map(|i| SegmentKey { record_id: "r".into(), segment_index: i })
            .collect();
        let rep = EvaluationReport {
            experiment_id: "x".into(),
            keys,
            leads: vec![LeadMetrics::from_segments(
                "x",
                LeadLabel::V1,
                vec![Some(0.2), Some(0.55), Some(0.9)],
                vec![0.0; 3],
            )],
        };
        assert_eq!(rep.typical_segment(), Some(1));
    }
}

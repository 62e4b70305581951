//! Truth-vs-reconstruction overlay figures.

use std::path::Path;
use std::str::FromStr;
use std::sync::Once;

use ndarray::s;
use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use crate::dataio::{SegmentKey, SegmentWindow, TARGET_RATE_HZ};
use crate::error::{Error, Result};
use crate::evaluation::{EvaluationReport, Reconstructor};
use crate::experiments::ExperimentSpec;
use crate::leads::LeadLabel;
use crate::training::gather;

pub const DEFAULT_DURATION_S: f64 = 4.0;

const FONT: &[u8] = include_bytes!("../assets/DejaVuSans.ttf");
static FONT_INIT: Once = Once::new();

/// Which test segment to draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordSelector {
    /// Segment whose mean PCC is nearest the experiment's mean PCC.
    Typical,
    /// First segment of a record, or a specific `record#index`.
    Record(String),
    Segment(SegmentKey),
}

impl FromStr for RecordSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "typical" {
            return Ok(Self::Typical);
        }
        if let Some((rec, idx)) = s.rsplit_once('#') {
            let segment_index = idx
                .parse()
                .map_err(|_| Error::Config(format!("bad segment index in {s:?}")))?;
            return Ok(Self::Segment(SegmentKey {
                record_id: rec.to_string(),
                segment_index,
            }));
        }
        Ok(Self::Record(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageFormat {
    #[default]
    Svg,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => ImageFormat::Png,
            _ => ImageFormat::Svg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub selector: RecordSelector,
    pub duration_s: f64,
    pub format: ImageFormat,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            selector: RecordSelector::Typical,
            duration_s: DEFAULT_DURATION_S,
            format: ImageFormat::Svg,
        }
    }
}

/// Number of samples drawn for `duration_s` at 125 Hz.
pub fn samples_for(duration_s: f64) -> Result<usize> {
    let n = duration_s * TARGET_RATE_HZ as f64;
    if !(n >= 2.0) || (n - n.round()).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "duration {duration_s} s is not a whole number of samples at {TARGET_RATE_HZ} Hz"
        )));
    }
    Ok(n.round() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadTrace {
    pub lead: LeadLabel,
    pub truth: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// PCC over the full window, as scored by evaluation.
    pub pcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub experiment_id: String,
    pub key: SegmentKey,
    pub sampling_rate_hz: u32,
    pub leads: Vec<LeadTrace>,
}

/// Resolves `selector` to an index into `windows` (which must be aligned
/// with `report.keys`).
pub fn select_segment(report: &EvaluationReport, selector: &RecordSelector) -> Result<usize> {
    let found = match selector {
        RecordSelector::Typical => report.typical_segment(),
        RecordSelector::Segment(k) => report.segment_index(k),
        RecordSelector::Record(r) => report
            .keys
            .iter()
            .enumerate()
            .filter(|(_, k)| &k.record_id == r)
            .min_by_key(|(_, k)| k.segment_index)
            .map(|(i, _)| i),
    };
    found.ok_or_else(|| Error::Config(format!("{}: no test segment matches {selector:?}", report.experiment_id)))
}

/// Reconstructs one segment and cuts the first `duration_s` seconds.
pub fn build_figure(
    model: &dyn Reconstructor,
    spec: &ExperimentSpec,
    report: &EvaluationReport,
    windows: &[SegmentWindow],
    plot: &PlotSpec,
) -> Result<Figure> {
    let n = samples_for(plot.duration_s)?;
    let idx = select_segment(report, &plot.selector)?;
    let window = windows
        .get(idx)
        .filter(|w| w.key() == report.keys[idx])
        .ok_or_else(|| Error::Config("test windows do not match the evaluation report".into()))?;
    if n > window.signals.ncols() {
        return Err(Error::Config(format!(
            "duration {} s exceeds the {}-sample window",
            plot.duration_s,
            window.signals.ncols()
        )));
    }
    let pred = model.reconstruct(&[window], spec)?;
    let truth = gather(&[window], &spec.output_leads, None);
    let leads = spec
        .output_leads
        .iter()
        .enumerate()
        .map(|(c, lead)| LeadTrace {
            lead: *lead,
            truth: truth.slice(s![0, c, ..n]).to_vec(),
            reconstruction: pred.slice(s![0, c, ..n]).to_vec(),
            pcc: report
                .leads
                .iter()
                .find(|m| m.lead == *lead)
                .and_then(|m| m.per_segment_pcc[idx]),
        })
        .collect();
    Ok(Figure {
        experiment_id: spec.experiment_id.clone(),
        key: window.key(),
        sampling_rate_hz: TARGET_RATE_HZ,
        leads,
    })
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn draw<DB: DrawingBackend>(root: DrawingArea<DB, Shift>, fig: &Figure) -> Result<()>
where
    DB::ErrorType: 'static,
{
    root.fill(&WHITE).map_err(plot_err)?;
    let accent = RGBColor(200, 30, 30);
    let panels = root.split_evenly((fig.leads.len(), 1));
    for (panel, trace) in panels.iter().zip(&fig.leads) {
        let n = trace.truth.len();
        let dt = 1.0 / fig.sampling_rate_hz as f64;
        let (lo, hi) = trace
            .truth
            .iter()
            .chain(&trace.reconstruction)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let pad = ((hi - lo) * 0.08).max(0.05);
        let title = match trace.pcc {
            Some(r) => format!("{}  PCC = {r:.3}", trace.lead),
            None => format!("{}  PCC undefined", trace.lead),
        };
        let mut chart = ChartBuilder::on(panel)
            .caption(title, ("sans-serif", 16))
            .margin(6)
            .x_label_area_size(28)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0..(n as f64 * dt), (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("time (s)")
            .y_desc("mV")
            .light_line_style(WHITE.mix(0.0))
            .label_style(("sans-serif", 11))
            .draw()
            .map_err(plot_err)?;
        let fill = accent.mix(0.25).filled();
        chart
            .draw_series((0..n.saturating_sub(1)).map(|i| {
                let (t0, t1) = (i as f64 * dt, (i + 1) as f64 * dt);
                Polygon::new(
                    vec![
                        (t0, trace.truth[i]),
                        (t1, trace.truth[i + 1]),
                        (t1, trace.reconstruction[i + 1]),
                        (t0, trace.reconstruction[i]),
                    ],
                    fill,
                )
            }))
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(
                trace.truth.iter().enumerate().map(|(i, v)| (i as f64 * dt, *v)),
                BLACK.stroke_width(2),
            ))
            .map_err(plot_err)?;
        chart
            .draw_series(DashedLineSeries::new(
                trace.reconstruction.iter().enumerate().map(|(i, v)| (i as f64 * dt, *v)),
                6,
                4,
                accent.stroke_width(2),
            ))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Writes `fig` as SVG or PNG, one subplot per lead in a single column.
pub fn render(fig: &Figure, path: &Path, format: ImageFormat) -> Result<()> {
    FONT_INIT.call_once(|| {
        let _ = register_font("sans-serif", FontStyle::Normal, FONT);
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let size = (1000u32, 40 + 190 * fig.leads.len() as u32);
    match format {
        ImageFormat::Svg => draw(SVGBackend::new(path, size).into_drawing_area(), fig),
        ImageFormat::Png => draw(BitMapBackend::new(path, size).into_drawing_area(), fig),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::evaluate_experiment;
    use crate::model::{UNet, UNetConfig};
    use crate::synth::{synthetic_windows, SynthConfig};

    #[test]
    fn durations() {
        assert_eq!(samples_for(4.0).unwrap(), 500);
        assert_eq!(samples_for(8.192).unwrap(), 1024);
        assert!(samples_for(0.001).is_err());
    }

    #[test]
    fn selectors_parse() {
        assert_eq!("typical".parse::<RecordSelector>().unwrap(), RecordSelector::Typical);
        assert_eq!(
            "patient001/s0010_re#3".parse::<RecordSelector>().unwrap(),
            RecordSelector::Segment(SegmentKey { record_id: "patient001/s0010_re".into(), segment_index: 3 })
        );
    }

    #[test]
    fn figure_and_render() {
        let spec: ExperimentSpec = "I+II+V3".parse().unwrap();
        let w = synthetic_windows(&SynthConfig::default(), 3, 1);
        let m = UNet::new(UNetConfig::new(3, 5).with_width(2, 2), 0).unwrap();
        let rep = evaluate_experiment(&m, &spec, &w).unwrap();
        let fig = build_figure(&m, &spec, &rep, &w, &PlotSpec::default()).unwrap();
        assert_eq!(fig.leads.len(), 5);
        assert!(fig.leads.iter().all(|l| l.truth.len() == 500 && l.reconstruction.len() == 500));
        let full = PlotSpec { duration_s: 8.192, ..Default::default() };
        assert_eq!(build_figure(&m, &spec, &rep, &w, &full).unwrap().leads[0].truth.len(), 1024);

        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("f.svg");
        render(&fig, &svg, ImageFormat::Svg).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.contains("PCC"));
        let png = dir.path().join("f.png");
        render(&fig, &png, ImageFormat::Png).unwrap();
        assert!(std::fs::metadata(&png).unwrap().len() > 1000);
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use leadrecon::dataio::prepare::{prepare_dataset, PrepareOptions};
use leadrecon::dataio::split::SplitPolicy;
use leadrecon::dataio::store::ProcessedData;
use leadrecon::evaluation::EvaluationReport;
use leadrecon::exec::{self, ExecMode};
use leadrecon::experiments::runner::{load_completed, reevaluate, ExperimentDir};
use leadrecon::experiments::{run_all, write_report, ExperimentSpec, RunConfig, RunContext, Selection};
use leadrecon::plot::{build_figure, render, ImageFormat, PlotSpec, RecordSelector, DEFAULT_DURATION_S};
use leadrecon::training::load_checkpoint;

#[derive(Parser)]
#[command(name = "leadrecon", version, about = "Reconstruct precordial ECG leads with a 1D U-net")]
struct Cli {
    /// Root holding raw/ and processed/ (defaults: data/raw, data/processed).
    #[arg(long, env = "ECG_DATA_ROOT", global = true)]
    data_root: Option<PathBuf>,
    /// Run all numeric kernels on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Record,
    Patient,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, resample to 125 Hz, window and split the raw corpora.
    PrepareData {
        /// Directory containing ptb-xl/ and/or ptb/.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Output directory for the processed dataset.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Split::Record)]
        split: Split,
    },
    /// Train and evaluate the selected experiments.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict to a group: singles, pair, pair-plus-one, pair-plus-two.
        #[arg(long)]
        group: Vec<String>,
        /// Restrict to a spec such as I+II+V3.
        #[arg(long)]
        spec: Vec<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Results directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Processed dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Retrain experiments that already completed.
        #[arg(long)]
        force: bool,
    },
    /// Re-evaluate stored checkpoints on the test windows.
    Eval {
        #[arg(long)]
        spec: Vec<String>,
        #[arg(long)]
        group: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use best-validation weights instead of the last epoch.
        #[arg(long)]
        best: bool,
    },
    /// Write the group tables and lead ranking from completed runs.
    Report {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Draw truth vs reconstruction for one test segment.
    Plot {
        #[arg(long)]
        spec: String,
        /// "typical", a record id, or record#segment.
        #[arg(long, default_value = "typical")]
        record: String,
        /// Image path; .png selects raster output, anything else SVG.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DURATION_S)]
        duration: f64,
        #[arg(long, default_value = "runs")]
        results: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        best: bool,
        #[arg(long)]
        png: bool,
    },
}

fn data_dir(cli_root: &Option<PathBuf>, sub: &str) -> PathBuf {
    cli_root.clone().unwrap_or_else(|| PathBuf::from("data")).join(sub)
}

fn load_data(dir: &Path) -> anyhow::Result<ProcessedData> {
    let (_, data) = ProcessedData::load(dir)
        .with_context(|| format!("loading processed dataset from {} (run prepare-data first)", dir.display()))?;
    Ok(data)
}

fn selected(groups: &[String], specs: &[String]) -> anyhow::Result<Vec<ExperimentSpec>> {
    let cfg = RunConfig {
        groups: groups.to_vec(),
        specs: specs.to_vec(),
        ..Default::default()
    };
    Ok(cfg.selected_specs()?)
}

fn print_report(out: &Path) -> anyhow::Result<()> {
    let summary = write_report(out)?;
    for (name, path, rows) in &summary.tables {
        println!("table {name}: {rows} rows -> {}", path.display());
    }
    if let Some(r) = &summary.ranking {
        let order: Vec<String> = r.iter().map(|(l, s)| format!("{l} ({s:.3})")).collect();
        println!("input-lead ranking: {}", order.join(" > "));
    }
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::PrepareData { raw, out, seed, split } => {
            let opts = PrepareOptions {
                raw_dir: raw.unwrap_or_else(|| data_dir(&cli.data_root, "raw")),
                out_dir: out.unwrap_or_else(|| data_dir(&cli.data_root, "processed")),
                seed,
                policy: match split {
                    Split::Record => SplitPolicy::Record,
                    Split::Patient => SplitPolicy::Patient,
                },
            };
            let m = prepare_dataset(&opts)?;
            for c in &m.corpora {
                println!(
                    "{}: {} records found, {} used, {} rejected, {} segments",
                    c.name,
                    c.records_found,
                    c.records_used,
                    c.rejected.len(),
                    c.segments
                );
            }
            for (name, s) in [("train", &m.train), ("val", &m.val), ("test", &m.test)] {
                if let Some(s) = s {
                    println!("{name}: {} windows from {} records", s.windows, s.records.len());
                }
            }
            for (name, e) in &m.einthoven {
                println!(
                    "{name}: Einthoven residual median {:.4} mV, p95 {:.4} mV, {:.1}% below {} mV ({})",
                    e.median_mv,
                    e.p95_mv,
                    100.0 * e.fraction_below_threshold,
                    e.threshold_mv,
                    if e.passed { "pass" } else { "FAIL" }
                );
            }
            println!("wrote {}", opts.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, group, spec, parallelism, seed, out, data, epochs, force } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig {
                    data_dir: data_dir(&cli.data_root, "processed"),
                    ..Default::default()
                },
            };
            if !group.is_empty() || !spec.is_empty() {
                cfg.groups = group;
                cfg.specs = spec;
            }
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(d) = data {
                cfg.data_dir = d;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.force |= force;
            cfg.validate()?;
            let specs = cfg.selected_specs()?;
            let data = load_data(&cfg.data_dir)?;
            let ctx = RunContext::new(&data, &cfg.data_dir, &cfg)?;
            println!(
                "running {} experiment(s) with parallelism {} into {}",
                specs.len(),
                cfg.parallelism,
                cfg.out_dir.display()
            );
            let summary = run_all(&specs, &ctx, cfg.parallelism);
            println!("trained {}, skipped {} (already complete), failed {}", summary.trained.len(), summary.skipped.len(), summary.failed.len());
            for (id, e) in &summary.failed {
                eprintln!("FAILED {id}: {e}");
            }
            if let Some(r) = &summary.report {
                for (name, path, rows) in &r.tables {
                    println!("table {name}: {rows} rows -> {}", path.display());
                }
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
            }
            Ok(if summary.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Eval { spec, group, out, data, best } => {
            let data = load_data(&data.unwrap_or_else(|| data_dir(&cli.data_root, "processed")))?;
            let selection = if best { Selection::Best } else { Selection::Last };
            let mut failed = false;
            for s in selected(&group, &spec)? {
                if !ExperimentDir::new(&out, &s).checkpoint(selection).exists() {
                    continue;
                }
                match reevaluate(&out, &s, selection, &data.test) {
                    Ok(rep) => print_eval(&rep),
                    Err(e) => {
                        eprintln!("FAILED {s}: {e}");
                        failed = true;
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Report { out } => {
            print_report(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { spec, record, out, duration, results, data, best, png } => {
            let spec: ExperimentSpec = spec.parse()?;
            let data = load_data(&data.unwrap_or_else(|| data_dir(&cli.data_root, "processed")))?;
            let dir = ExperimentDir::new(&results, &spec);
            let selection = if best { Selection::Best } else { Selection::Last };
            let ckpt = load_checkpoint(&dir.checkpoint(selection))
                .with_context(|| format!("no trained model for {spec} under {}", results.display()))?;
            let report = match load_completed(&results, &spec)? {
                Some(done) if !best => done.report,
                _ => leadrecon::evaluation::evaluate_experiment(&ckpt, &spec, &data.test)?,
            };
            let selector: RecordSelector = record.parse()?;
            let format = match (&out, png) {
                (_, true) => ImageFormat::Png,
                (Some(p), false) => ImageFormat::from_path(p),
                (None, false) => ImageFormat::Svg,
            };
            let ext = if format == ImageFormat::Png { "png" } else { "svg" };
            let out = out.unwrap_or_else(|| dir.0.join(format!("overlay.{ext}")));
            let plot = PlotSpec { selector, duration_s: duration, format };
            let fig = build_figure(&ckpt, &spec, &report, &data.test, &plot)?;
            render(&fig, &out, format)?;
            println!("{} segment {} ({} leads, {} samples) -> {}", spec, fig.key, fig.leads.len(), fig.leads[0].truth.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_eval(rep: &EvaluationReport) {
    println!("{} ({} segments)", rep.experiment_id, rep.keys.len());
    for l in &rep.leads {
        println!(
            "  {:>3}: mean PCC {}  median PCC {}  MSE {:.5} mV²  undefined {}",
            l.lead.to_string(),
            l.mean_pcc.map_or("-".into(), |v| format!("{v:.4}")),
            l.median_pcc.map_or("-".into(), |v| format!("{v:.4}")),
            l.mean_mse,
            l.undefined_count
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.sequential {
        exec::set_mode(ExecMode::Sequential);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

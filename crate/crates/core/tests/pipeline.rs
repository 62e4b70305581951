mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use leadrecon::dataio::store::ProcessedData;
use leadrecon::experiments::runner::TABLES_DIR;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leadrecon"))
}

fn read_tables(out: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(out.join(TABLES_DIR))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect()
}

#[test]
fn prepare_counts_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::synthetic_dataset(dir.path(), 42);
    // 20 ten-second records truncate to one window each; six 20 s records
    // give 2500 samples at 125 Hz, so two whole windows each.
    assert_eq!(m.train.as_ref().unwrap().windows, 18);
    assert_eq!(m.val.as_ref().unwrap().windows, 2);
    assert_eq!(m.test.as_ref().unwrap().windows, 12);
    assert!(m.einthoven.iter().all(|(_, e)| e.passed));

    let (_, data) = ProcessedData::load(&dir.path().join("processed")).unwrap();
    let train: Vec<&str> = data.train.iter().map(|w| w.source_record_id.as_str()).collect();
    assert!(data.val.iter().all(|w| !train.contains(&w.source_record_id.as_str())));
    assert!(data.test.iter().all(|w| w.signals.dim() == (12, 1024)));
    assert_eq!(data.test.iter().filter(|w| w.segment_index == 1).count(), 6);
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    common::synthetic_dataset(a.path(), 7);
    common::synthetic_dataset(b.path(), 7);
    for f in ["manifest.json", "train.bin", "val.bin", "test.bin"] {
        let x = fs::read(a.path().join("processed").join(f)).unwrap();
        let y = fs::read(b.path().join("processed").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn concurrent_runs_match_serial_and_resume_skips() {
    let dir = tempfile::tempdir().unwrap();
    common::synthetic_dataset(dir.path(), 42);
    let specs = ["I+II+V2", "I+II+V5", "V3"];

    let serial = common::tiny_run_config(dir.path(), "serial", &specs);
    let s = common::run_config(&serial);
    assert!(s.success(), "{:?}", s.failed);
    assert_eq!(s.trained.len(), 3);

    let mut conc = common::tiny_run_config(dir.path(), "conc", &specs);
    conc.parallelism = 2;
    let c = common::run_config(&conc);
    assert!(c.success(), "{:?}", c.failed);
    assert_eq!(read_tables(&serial.out_dir), read_tables(&conc.out_dir));
    for id in ["I+II+V2", "V3"] {
        let m = |root: &Path| fs::read(root.join(id).join("manifest.json")).unwrap();
        assert!(m(&serial.out_dir) == m(&conc.out_dir), "{id} manifest differs");
    }

    let again = common::run_config(&serial);
    assert_eq!(again.skipped.len(), 3);
    assert!(again.trained.is_empty());

    let forced = common::run_config(&leadrecon::experiments::RunConfig { force: true, ..serial.clone() });
    assert_eq!(forced.trained.len(), 3);
    assert_eq!(read_tables(&serial.out_dir), read_tables(&conc.out_dir));
}

#[test]
fn cli_reports_missing_data_and_bad_keys() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("raw")).unwrap();
    let out = bin()
        .args(["prepare-data", "--raw"])
        .arg(dir.path().join("raw"))
        .arg("--out")
        .arg(dir.path().join("p"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ptb-xl"));

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\nepochz = 3\n[train]\nlr = 0.1\n").unwrap();
    let out = bin().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epochz") && err.contains("train.lr"), "{err}");

    let out = bin().args(["report", "--out"]).arg(dir.path().join("nothing")).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    leadrecon::synth::write_synthetic_corpus(&root.join("raw"), &Default::default(), 3).unwrap();
    let ok = |cmd: &mut Command| {
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    let text = ok(bin().arg("--data-root").arg(root).arg("prepare-data"));
    assert!(text.contains("test: 12 windows"), "{text}");

    fs::write(
        root.join("run.toml"),
        format!(
            "data_dir = {:?}\nout_dir = {:?}\nspecs = [\"I+II+V4\"]\n[train]\nepochs = 1\nbatch_size = 6\n[model]\nbase_width = 4\ndepth = 2\n",
            root.join("processed"),
            root.join("runs")
        ),
    )
    .unwrap();
    let text = ok(bin().arg("train").arg("--config").arg(root.join("run.toml")));
    assert!(text.contains("trained 1"), "{text}");
    let text = ok(bin().arg("report").arg("--out").arg(root.join("runs")));
    assert!(text.contains("table"), "{text}");
    let text = ok(bin()
        .arg("--data-root")
        .arg(root)
        .args(["eval", "--spec", "I+II+V4", "--out"])
        .arg(root.join("runs")));
    assert!(text.contains("mean PCC"), "{text}");
    let png = root.join("fig.png");
    let text = ok(bin()
        .arg("--data-root")
        .arg(root)
        .args(["plot", "--spec", "I+II+V4", "--results"])
        .arg(root.join("runs"))
        .arg("--out")
        .arg(&png));
    assert!(text.contains("5 leads, 500 samples"), "{text}");
    assert!(fs::metadata(&png).unwrap().len() > 0);
}

#[test]
fn synthetic_learning_signal() {
    use leadrecon::evaluation::evaluate_experiment;
    use leadrecon::leads::LeadLabel;
    use leadrecon::model::{UNet, UNetConfig};
    use leadrecon::synth::{synthetic_windows, SynthConfig};
    use leadrecon::training::{train, TrainConfig};

    let spec: leadrecon::experiments::ExperimentSpec = "I+II+V3".parse().unwrap();
    let cfg = SynthConfig { len: 256, ..Default::default() };
    let windows = synthetic_windows(&cfg, 72, 11);
    let (tr, va) = windows.split_at(64);
    let model = UNet::new(UNetConfig::new(3, 5).with_width(8, 3), 1).unwrap();
    let tc = TrainConfig { epochs: 20, batch_size: 4, learning_rate: 1e-3, seed: 2, ..Default::default() };
    let out = train(model, tr, va, &spec, &tc, |_| {}).unwrap();
    let rep = evaluate_experiment(&out.last, &spec, va).unwrap();
    for lead in [LeadLabel::V2, LeadLabel::V4] {
        let m = rep.leads.iter().find(|m| m.lead == lead).unwrap();
        assert!(m.mean_pcc.unwrap() > 0.5, "{lead}: {:?}", m.mean_pcc);
    }
}

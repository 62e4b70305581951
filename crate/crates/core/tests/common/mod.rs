//! Oracles and experiment drivers shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leadrecon::dataio::SegmentWindow;
use leadrecon::experiments::ExperimentSpec;
use leadrecon::metrics::{mse_grad, mse_loss};
use leadrecon::model::{UNet, UNetConfig};
use leadrecon::synth::{synthetic_windows, SynthConfig};
use leadrecon::training::{gather, train, TrainConfig};

/// Textbook two-pass Pearson correlation.
pub fn pcc_two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Elementwise triple loop.
pub fn mse_brute(p: &Array3<f64>, t: &Array3<f64>) -> f64 {
    let (b, c, l) = p.dim();
    let mut s = 0.0;
    for i in 0..b {
        for j in 0..c {
            for k in 0..l {
                let d = p[[i, j, k]] - t[[i, j, k]];
                s += d * d;
            }
        }
    }
    s / (b * c * l) as f64
}

/// Closed-form parameter count of the U-net, independent of the model code.
pub fn unet_params_formula(ch_in: usize, ch_out: usize, f: usize, depth: usize) -> usize {
    let conv = |i: usize, o: usize, k: usize| i * o * k + o;
    let bn = |c: usize| 2 * c;
    let block = |i: usize, o: usize| conv(i, o, 3) + bn(o) + conv(o, o, 3) + bn(o);
    let mut total = 0;
    let mut c = ch_in;
    for k in 0..depth {
        total += block(c, f << k);
        c = f << k;
    }
    total += block(c, f << depth);
    for k in 0..depth {
        let w = f << k;
        total += 2 * w * w * 2 + w;
        total += block(2 * w, w);
    }
    total + conv(f, ch_out, 1)
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Relative error with a floor for gradients that vanish analytically
/// (convolution biases followed by batch norm).
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares backprop gradients of the training-mode MSE against central
/// differences for every parameter of a small U-net.
pub fn gradient_check(f: usize, depth: usize, len: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ch_in, ch_out, batch) = (2, 3, 2);
    let x = Array3::from_shape_fn((batch, ch_in, len), |_| rng.gen_range(-1.0..1.0));
    let y = Array3::from_shape_fn((batch, ch_out, len), |_| rng.gen_range(-1.0..1.0));
    let mut model = UNet::new(UNetConfig::new(ch_in, ch_out).with_width(f, depth), seed).unwrap();

    model.zero_grad();
    let pred = model.forward_train(x.clone()).unwrap();
    model.backward(&mse_grad(pred.view(), y.view()));
    let analytic = model.flat_grads();

    let base = model.flat_params();
    let mut loss_at = |p: &[f64]| {
        model.set_flat_params(p).unwrap();
        let out = model.forward_train(x.clone()).unwrap();
        mse_loss(out.view(), y.view()).unwrap()
    };
    let h = 1e-6;
    let mut worst = (0.0, 0);
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + h;
        let up = loss_at(&p);
        p[i] = base[i] - h;
        let down = loss_at(&p);
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    GradCheck {
        checked: base.len(),
        max_rel_err: worst.0,
        worst_index: worst.1,
    }
}

pub struct Overfit {
    pub first: f64,
    pub last: f64,
}

/// Trains a width-8 U-net on the same 8 windows for `epochs` epochs, one
/// full-batch step per epoch.
pub fn overfit(epochs: usize) -> Overfit {
    let spec: ExperimentSpec = "I+II+V2+V4".parse().unwrap();
    let windows = synthetic_windows(&SynthConfig::default(), 8, 21);
    let model = UNet::new(UNetConfig::new(spec.ch_in(), spec.ch_out()).with_width(8, 4), 3).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 5,
        ..Default::default()
    };
    let out = train(model, &windows, &[], &spec, &cfg, |_| {}).unwrap();
    let h = &out.last.history;
    Overfit {
        first: h[0].train_mse,
        last: h[h.len() - 1].train_mse,
    }
}

/// Loss on a fixed batch before and after one AdamW step at `lr`.
pub fn one_step(lr: f64) -> (f64, f64) {
    use leadrecon::training::{AdamW, AdamWParams};
    let spec: ExperimentSpec = "I+II+V3".parse().unwrap();
    let w = synthetic_windows(&SynthConfig { len: 64, ..Default::default() }, 4, 8);
    let refs: Vec<&SegmentWindow> = w.iter().collect();
    let x = gather(&refs, &spec.input_leads, None);
    let y = gather(&refs, &spec.output_leads, None);
    let mut model = UNet::new(UNetConfig::new(3, 5).with_width(4, 2), 2).unwrap();
    let mut opt = AdamW::new(
        AdamWParams {
            learning_rate: lr,
            ..Default::default()
        },
        model.num_params(),
    );
    model.zero_grad();
    let pred = model.forward_train(x.clone()).unwrap();
    let before = mse_loss(pred.view(), y.view()).unwrap();
    model.backward(&mse_grad(pred.view(), y.view()));
    opt.step(&mut model);
    let pred = model.forward_train(x).unwrap();
    (before, mse_loss(pred.view(), y.view()).unwrap())
}

/// Writes the default synthetic raw corpus under `root/raw` and prepares it
/// into `root/processed`.
pub fn synthetic_dataset(root: &std::path::Path, seed: u64) -> leadrecon::dataio::store::DatasetManifest {
    use leadrecon::dataio::prepare::{prepare_dataset, PrepareOptions};
    use leadrecon::dataio::split::SplitPolicy;
    use leadrecon::synth::{write_synthetic_corpus, CorpusLayout};
    write_synthetic_corpus(&root.join("raw"), &CorpusLayout::default(), seed).unwrap();
    prepare_dataset(&PrepareOptions {
        raw_dir: root.join("raw"),
        out_dir: root.join("processed"),
        seed,
        policy: SplitPolicy::Record,
    })
    .unwrap()
}

/// A run configuration small enough for a test: width 4, depth 2, 2 epochs.
pub fn tiny_run_config(root: &std::path::Path, out: &str, specs: &[&str]) -> leadrecon::experiments::RunConfig {
    use leadrecon::experiments::{ModelSection, RunConfig};
    RunConfig {
        data_dir: root.join("processed"),
        out_dir: root.join(out),
        specs: specs.iter().map(|s| s.to_string()).collect(),
        train: TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        },
        model: ModelSection { base_width: 4, depth: 2 },
        ..Default::default()
    }
}

/// Runs `cfg` against its processed dataset and returns the summary.
pub fn run_config(cfg: &leadrecon::experiments::RunConfig) -> leadrecon::experiments::RunSummary {
    use leadrecon::dataio::store::ProcessedData;
    use leadrecon::experiments::{run_all, RunContext};
    let (_, data) = ProcessedData::load(&cfg.data_dir).unwrap();
    let ctx = RunContext::new(&data, &cfg.data_dir, cfg).unwrap();
    run_all(&cfg.selected_specs().unwrap(), &ctx, cfg.parallelism)
}

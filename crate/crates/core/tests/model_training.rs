mod common;

use ndarray::Array3;

use leadrecon::experiments::enumerate_lead_configs;
use leadrecon::model::{count_parameters, UNet, UNetConfig};

#[test]
fn parameter_counts_match_closed_form() {
    // frozen from an independent Python evaluation of the same formula
    let frozen = [
        ((3, 5, 64, 4), 10_824_773),
        ((2, 6, 64, 4), 10_824_646),
        ((1, 6, 64, 4), 10_824_454),
        ((4, 4, 64, 4), 10_824_900),
        ((2, 3, 4, 2), 2_819),
    ];
    for ((ci, co, f, d), want) in frozen {
        assert_eq!(common::unet_params_formula(ci, co, f, d), want);
        let m = UNet::new(UNetConfig::new(ci, co).with_width(f, d), 0).unwrap();
        assert_eq!(count_parameters(&m), want, "{ci}->{co} f={f} d={d}");
        assert_eq!(m.flat_params().len(), want);
    }
}

#[test]
fn every_registry_spec_builds_with_matching_arity() {
    for spec in enumerate_lead_configs().specs() {
        let m = UNet::new(UNetConfig::new(spec.ch_in(), spec.ch_out()).with_width(8, 4), 1).unwrap();
        let x = Array3::zeros((2, spec.ch_in(), 1024));
        let (y, trace) = m.forward_traced(x.view()).unwrap();
        assert_eq!(y.dim(), (2, spec.ch_out(), 1024));
        let enc: Vec<usize> = (0..4)
            .map(|k| trace.iter().find(|s| s.stage == format!("enc{k}")).unwrap().shape.1)
            .collect();
        assert_eq!(enc, vec![8, 16, 32, 64]);
        assert_eq!(trace.iter().find(|s| s.stage == "bottleneck").unwrap().shape, (2, 128, 64));
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let g = common::gradient_check(4, 2, 32, 17);
    assert!(g.checked > 2000);
    assert!(g.max_rel_err < 1e-3, "max relative error {} at parameter {}", g.max_rel_err, g.worst_index);
}

#[test]
fn small_step_decreases_batch_loss() {
    let (before, after) = common::one_step(1e-5);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn tiny_model_overfits_eight_windows() {
    let o = common::overfit(200);
    assert!(o.last <= 0.01 * o.first, "epoch 1 {} -> epoch 200 {}", o.first, o.last);
}

#[test]
fn parallel_and_sequential_training_agree_bitwise() {
    use leadrecon::exec::{with_mode, ExecMode};
    use leadrecon::synth::{synthetic_windows, SynthConfig};
    use leadrecon::training::{train, TrainConfig};
    let spec: leadrecon::experiments::ExperimentSpec = "I+II+V2+V4".parse().unwrap();
    let w = synthetic_windows(&SynthConfig { len: 128, ..Default::default() }, 10, 4);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 9, ..Default::default() };
    let run = || {
        let m = UNet::new(UNetConfig::new(4, 4).with_width(4, 3), 6).unwrap();
        train(m, &w[..8], &w[8..], &spec, &cfg, |_| {}).unwrap().last
    };
    let par = with_mode(ExecMode::Parallel, run);
    let seq = with_mode(ExecMode::Sequential, run);
    assert_eq!(par.model.flat_params(), seq.model.flat_params());
    assert_eq!(par.history.iter().map(|h| h.train_mse).collect::<Vec<_>>(), seq.history.iter().map(|h| h.train_mse).collect::<Vec<_>>());
}

use nalgebra::DVector;

use quadmem::data::{gen_synthetic, load_params, read_trace, save_params, write_trace, ParamsBundle};
use quadmem::diagnostics::stationarity_check;
use quadmem::features::{train_three_layer, ThreeLayerConfig};
use quadmem::model::{loss_f, TwoLayerParams};
use quadmem::optim::{
    max_unperturbed_increase, train_two_layer, AdamConfig, OptimizerChoice, RunStatus, StepRule, TwoLayerTrainConfig,
};

#[test]
fn pgd_escapes_the_origin_where_gd_stays() {
    let data = gen_synthetic(10, 4, 12).unwrap();
    let base = TwoLayerTrainConfig { max_iters: 100_000, stop_at_target: true, ..TwoLayerTrainConfig::new(10, 1e-4) };

    let gd = train_two_layer(
        &data,
        &TwoLayerTrainConfig { optimizer: OptimizerChoice::Gd(StepRule::Fixed(0.05)), max_iters: 5_000, ..base.clone() },
    )
    .unwrap();
    assert_eq!(gd.final_loss, gd.theorem.f0);

    let pgd = train_two_layer(&data, &TwoLayerTrainConfig { optimizer: OptimizerChoice::Pgd(StepRule::Fixed(0.05)), ..base })
        .unwrap();
    assert!(matches!(pgd.status, RunStatus::TargetReached { .. }), "{:?}", pgd.status);
    assert!(pgd.final_loss <= 1e-4);
    assert!(max_unperturbed_increase(&pgd.trace) <= 1e-9);
    assert_eq!(pgd.norm_violations, 0);
}

#[test]
fn trained_weights_are_second_order_stationary() {
    let data = gen_synthetic(10, 4, 1).unwrap();
    let cfg = TwoLayerTrainConfig {
        max_iters: 20_000,
        optimizer: OptimizerChoice::Pgd(StepRule::Fixed(0.05)),
        ..TwoLayerTrainConfig::new(10, 1e-3)
    };
    let run = train_two_layer(&data, &cfg).unwrap();
    let t = &run.theorem;
    let st = stationarity_check(&run.params, &data, t.gamma, t.epsilon, t.rho).unwrap();
    assert!(st.is_eps_sosp, "{st:?}");
}

#[test]
fn zero_labels_finish_at_the_origin() {
    let data = gen_synthetic(6, 3, 2).unwrap().with_labels(DVector::zeros(6)).unwrap();
    let run = train_two_layer(&data, &TwoLayerTrainConfig { max_iters: 500, ..TwoLayerTrainConfig::new(8, 1e-4) })
        .unwrap();
    assert!(run.final_loss <= 1e-20);
    assert!(run.params.weights().norm() < 1e-6);
}

#[test]
fn adam_needs_a_random_start() {
    let data = gen_synthetic(20, 6, 3).unwrap();
    let cfg = TwoLayerTrainConfig {
        max_iters: 5_000,
        optimizer: OptimizerChoice::Adam(AdamConfig { lr: 0.01, ..AdamConfig::default() }),
        ..TwoLayerTrainConfig::new(14, 1e-3)
    };
    let stuck = train_two_layer(&data, &cfg).unwrap();
    assert_eq!(stuck.final_loss, stuck.theorem.f0);

    let moved = train_two_layer(&data, &TwoLayerTrainConfig { init_radius: 0.1, ..cfg }).unwrap();
    assert!(moved.final_loss <= 1e-3, "{}", moved.final_loss);
}

#[test]
fn three_layer_trains_and_round_trips_to_disk() {
    let data = gen_synthetic(16, 5, 8).unwrap();
    let mut cfg = ThreeLayerConfig::new(2, 1e-3);
    cfg.train.max_iters = 200_000;
    cfg.train.stop_at_target = true;
    cfg.train.optimizer = OptimizerChoice::Pgd(StepRule::Fixed(8e-3));
    let out = train_three_layer(&data, &cfg).unwrap();
    assert!(out.run.final_loss <= 1e-3);
    assert_eq!(out.run.params.r(), 2 * 8 + 2);

    let dir = tempfile::tempdir().unwrap();
    let bundle = ParamsBundle {
        weights: out.run.params.weights().clone(),
        features: Some((out.layer.matrix().clone(), out.layer.p())),
    };
    save_params(&dir.path().join("params.bin"), &bundle).unwrap();
    write_trace(&dir.path().join("trace.csv"), &out.run.trace).unwrap();
    let loaded = load_params(&dir.path().join("params.bin")).unwrap();
    assert_eq!(loaded, bundle);
    assert_eq!(read_trace(&dir.path().join("trace.csv")).unwrap(), out.run.trace);
    let w = TwoLayerParams::new(loaded.weights).unwrap();
    assert_eq!(loss_f(&w, &out.features).unwrap(), out.run.final_loss);

    let again = train_three_layer(&data, &cfg).unwrap();
    assert_eq!(again.run.trace, out.run.trace);
}

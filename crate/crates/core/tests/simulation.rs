use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacfl_core::client::ClientState;
use sacfl_core::data::{make_blobs, AttackKind, Dataset};
use sacfl_core::nn::{accuracy, ParamRole, ParamSlot};
use sacfl_core::orchestrator::{
    calibrate_drift_threshold, calibration_trace, evaluate_historical, run_simulation, storage_report, AttackConfig,
    DataConfig, DriftPolicy, DriftThreshold, Simulation, BYTES_PER_PARAM,
};
use sacfl_core::{Error, ExperimentConfig, Method, Network, OptimizerConfig, RoundMetrics, Tensor};

fn small(tasks: usize, rounds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.num_clients = 4;
    cfg.stream.num_tasks = tasks;
    cfg.stream.rounds_per_task = rounds;
    cfg.training.local_epochs = 2;
    if let DataConfig::Blobs(b) = &mut cfg.data {
        b.num_classes = 2 * tasks;
        b.train_per_class = 100;
        b.test_per_class = 20;
        b.holdout_per_class = 20;
    }
    cfg
}

fn strip_time(mut m: Vec<RoundMetrics>) -> Vec<RoundMetrics> {
    for r in &mut m {
        r.wall_time_ms = 0.0;
    }
    m
}

#[test]
fn frozen_dynamics_keep_the_initial_model() {
    for method in [Method::Fedavg, Method::Sacfl, Method::Fedprox] {
        let mut cfg = small(2, 3);
        cfg.method = method;
        cfg.training.optimizer = OptimizerConfig::sgd(0.0);
        cfg.detection.drift_threshold = DriftThreshold::Fixed(1.0);
        let policy = if method == Method::Sacfl { DriftPolicy::Threshold(1.0) } else { DriftPolicy::Disabled };
        let mut sim = Simulation::new(&cfg, policy).unwrap();
        let initial = sim.global_model().clone();
        while !sim.is_finished() {
            let m = sim.step().unwrap();
            assert_eq!(sim.global_model(), &initial, "{method:?} round {}", m.round);
            assert!(m.drift.iter().all(|&d| !d));
        }
    }
}

#[test]
fn single_task_sacfl_reduces_to_fedavg() {
    let mut cfg = small(1, 6);
    let sacfl = run_simulation(&cfg).unwrap();
    cfg.method = Method::Fedavg;
    let fedavg = run_simulation(&cfg).unwrap();
    assert_eq!(sacfl.drift_threshold, None);
    assert_eq!(strip_time(sacfl.metrics), strip_time(fedavg.metrics));
    assert_eq!(sacfl.final_accuracy, fedavg.final_accuracy);
}

#[test]
fn identical_seeds_give_identical_metric_streams() {
    let cfg = small(3, 3);
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(strip_time(a.metrics), strip_time(b.metrics));
    let mut other = cfg.clone();
    other.seed = 1;
    let c = run_simulation(&other).unwrap();
    assert_ne!(strip_time(run_simulation(&cfg).unwrap().metrics), strip_time(c.metrics));
}

#[test]
fn metrics_cover_every_round_with_bounded_accuracies() {
    let cfg = small(3, 3);
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.metrics.len(), cfg.total_rounds());
    for (i, m) in out.metrics.iter().enumerate() {
        assert_eq!(m.round, i);
        let accs: Vec<f64> = m.task_accuracy.iter().flatten().copied().collect();
        assert!(accs.iter().all(|a| (0.0..=1.0).contains(a)));
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - m.avg_hist_acc).abs() < 1e-12);
        assert_eq!(accs.len(), m.task + 1);
    }
}

#[test]
fn pools_grow_with_completed_benign_tasks() {
    let cfg = small(4, 3);
    let mut sim = Simulation::new(&cfg, DriftPolicy::Oracle).unwrap();
    let metrics = sim.run().unwrap();
    let fired: Vec<usize> = metrics.iter().filter(|m| m.drift.iter().any(|&d| d)).map(|m| m.round).collect();
    assert_eq!(fired, vec![3, 6, 9]);
    assert_eq!(sim.server().encoder_pool.len(), 3);
    assert!(sim.clients().iter().all(|c| c.decoder_pool().len() == 3));
    assert_eq!(sim.server().decoder_pool.len(), 4 * 3);
}

#[test]
fn adversarial_tasks_add_no_pool_entries() {
    let mut cfg = small(3, 3);
    // Overlapping, shifted classes, where flipped labels visibly move the encoder.
    if let DataConfig::Blobs(b) = &mut cfg.data {
        b.separation = 3.0;
        b.shift = 2.0;
        b.train_per_class = 300;
    }
    cfg.training.optimizer = OptimizerConfig::sgd(0.03);
    cfg.stream.attacks = vec![AttackConfig { task: 1, kind: AttackKind::LabelFlip, clients: None }];
    cfg.detection.degrade_threshold = 0.04;
    let mut sim = Simulation::new(&cfg, DriftPolicy::Oracle).unwrap();
    let metrics = sim.run().unwrap();
    assert!(metrics[3].degrade.unwrap() > 0.04, "label flip should degrade history: {:?}", metrics[3].degrade);
    assert!(metrics[6].degrade.unwrap() < 0.04);
    assert_eq!(sim.adversarial_tasks(), &BTreeSet::from([1]));
    assert!(metrics[3..6].iter().all(|m| m.attack));
    assert_eq!(sim.server().encoder_pool.len(), 1);
    assert!(sim.clients().iter().all(|c| c.decoder_pool().keys().copied().collect::<Vec<_>>() == vec![0]));
    assert_eq!(sim.server().decoder_pool.len(), 4);
    // The adversarial task is excluded from the historical average.
    assert!(metrics.last().unwrap().task_accuracy[1].is_none());
}

#[test]
fn invalid_configs_fail_before_training() {
    let mut cfg = small(2, 3);
    cfg.clients_per_round = Some(9);
    assert!(matches!(run_simulation(&cfg), Err(Error::Config(_))));
    let mut cfg = small(2, 3);
    cfg.detection.alpha = 2.0;
    assert!(matches!(run_simulation(&cfg), Err(Error::Config(_))));
}

#[test]
fn partial_participation_is_seeded() {
    let mut cfg = small(2, 3);
    cfg.clients_per_round = Some(2);
    cfg.robust.aggregator = sacfl_core::orchestrator::RobustKind::Median;
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(strip_time(a.metrics.clone()), strip_time(b.metrics));
    assert!(a.metrics.iter().all(|m| m.diffs.iter().filter(|d| d.is_some()).count() <= 2));
}

#[test]
fn calibration_is_reproducible_and_replays_cleanly() {
    let cfg = small(2, 4);
    let th = calibrate_drift_threshold(&cfg, 4).unwrap();
    assert_eq!(th.to_bits(), calibrate_drift_threshold(&cfg, 4).unwrap().to_bits());
    let trace = calibration_trace(&cfg, 4).unwrap();
    assert!(!trace.boundary.is_empty() && !trace.within.is_empty());
    assert!(trace.within.iter().all(|&d| d < th));
    assert!(trace.boundary.iter().all(|&d| d > th));
}

#[test]
fn calibration_fails_when_nothing_moves() {
    let mut cfg = small(2, 3);
    cfg.training.optimizer = OptimizerConfig::sgd(0.0);
    assert!(matches!(calibrate_drift_threshold(&cfg, 3), Err(Error::Calibration(_))));
    assert!(matches!(run_simulation(&cfg), Err(Error::Calibration(_))));
}

fn two_class(seed: u64) -> (Network, ClientState, Dataset) {
    let data = make_blobs(4, 6, 30, 4.0, 1.0, seed).unwrap();
    let net = Network::mlp(&[6, 8, 4], None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut c = ClientState::new(0, net.clone(), OptimizerConfig::sgd(0.1), 16, 1.0).unwrap();
    c.refresh_probe(&data, 1).unwrap();
    (net, c, data)
}

#[test]
fn history_after_first_task_is_that_task() {
    let (net, mut c, data) = two_class(1);
    let (trained, _) = c.local_train(&net, &data, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    c.on_drift(trained.decoder_params(), true, &data, 3).unwrap();
    let h = evaluate_historical(&trained, &[c], &[(0, &data)]).unwrap();
    assert_eq!(h.per_task.len(), 1);
    assert_eq!(h.average, h.per_task[0].1);
    assert_eq!(h.average, accuracy(&trained.predict(data.features()).unwrap(), data.labels()));
}

#[test]
fn historical_accuracy_matches_recount() {
    let (net, mut c, data) = two_class(4);
    let (t0, _) = c.local_train(&net, &data, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    c.on_drift(t0.decoder_params(), true, &data, 6).unwrap();
    let other = make_blobs(4, 6, 30, 4.0, 1.0, 77).unwrap();
    let (t1, _) = c.local_train(&t0, &other, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let h = evaluate_historical(&t1, &[c.clone()], &[(0, &data), (1, &other)]).unwrap();

    let mut past = t1.clone();
    past.set_decoder(c.decoder_pool().get(&0).unwrap()).unwrap();
    let count = |n: &Network, d: &Dataset| {
        let p = n.predict(d.features()).unwrap();
        p.iter().zip(d.labels()).filter(|(a, b)| a == b).count() as f64 / d.len() as f64
    };
    assert_eq!(h.per_task, vec![(0, count(&past, &data)), (1, count(&t1, &other))]);
    assert!(matches!(evaluate_historical(&t1, &[c], &[(3, &data)]), Err(Error::Lookup(_))));
}

#[test]
fn label_independent_of_features_scores_chance() {
    let classes = 5;
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::new(vec![n, 6], (0..n * 6).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let data = Dataset::new(x, y, (0..classes).collect()).unwrap();
    let net = Network::mlp(&[6, 8, classes], None, &mut rng).unwrap();
    let c = ClientState::new(0, net.clone(), OptimizerConfig::sgd(0.1), 16, 1.0).unwrap();
    let h = evaluate_historical(&net, &[c], &[(0, &data)]).unwrap();
    let p = 1.0 / classes as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((h.average - p).abs() <= 3.0 * sigma, "accuracy {} vs chance {p}", h.average);
}

#[test]
fn storage_counts_decoder_against_full_model() {
    let classes = 10;
    let net = Network::mlp(&[64, 32, classes], None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (net_params, dec) = (64 * 32 + 32 + 32 * classes + classes, 32 * classes + classes);
    let mut c = ClientState::new(0, net.clone(), OptimizerConfig::sgd(0.1), 16, 1.0).unwrap();
    let data = make_blobs(classes, 64, 5, 4.0, 1.0, 0).unwrap();
    c.refresh_probe(&data, 0).unwrap();
    let r0 = storage_report(&[c.clone()], &net);
    assert_eq!(r0.ratio, dec as f64 / net_params as f64);
    assert_eq!(r0.full_model_bytes, net_params * BYTES_PER_PARAM);
    assert_eq!(r0.decoder_pool_bytes, 0);
    for task in 1..=3 {
        c.on_drift(c.model.decoder_params(), true, &data, task).unwrap();
        let r = storage_report(&[c.clone()], &net);
        assert_eq!(r.decoder_pool_bytes, task as usize * dec * BYTES_PER_PARAM);
        let recount: usize = c.decoder_pool().values().map(|p| p.len() * std::mem::size_of::<f64>()).sum();
        assert_eq!(recount, r.decoder_pool_bytes);
    }
}

#[test]
fn robust_baselines_run_on_the_full_model() {
    for method in [Method::Krum, Method::Median, Method::TrimmedMean] {
        let mut cfg = small(2, 3);
        cfg.method = method;
        cfg.robust.trim_beta = 0.25;
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 6);
        assert_eq!(out.encoder_pool_len, 0);
        // Attack mode belongs to the adaptive method only.
        assert!(out.metrics.iter().all(|m| !m.attack && m.degrade.is_none()));
        cfg.method = Method::Fedavg;
        assert_ne!(run_simulation(&cfg).unwrap().final_accuracy, out.final_accuracy, "{method:?}");
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn flat_param_vectors_report_layout_mismatch() {
    let a = sacfl_core::ParamVector::new(
        vec![1.0, 2.0],
        vec![ParamSlot { layer: 0, role: ParamRole::Weight, shape: vec![2] }],
    )
    .unwrap();
    let b = sacfl_core::ParamVector::new(
        vec![1.0, 2.0],
        vec![ParamSlot { layer: 0, role: ParamRole::Bias, shape: vec![2] }],
    )
    .unwrap();
    assert!(matches!(a.check_layout(&b), Err(Error::Contract(_))));
}

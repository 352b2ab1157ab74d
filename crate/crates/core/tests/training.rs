mod common;

use meshgnn::eval::{collect_samples, ExperimentConfig};
use meshgnn::gnn::{init_params, GnnConfig, GnnParams};
use meshgnn::graph::feature_stats;
use meshgnn::sim::{run_simulation, DecisionSample, WorkloadSpec};
use meshgnn::topogen::social_network_preset;
use meshgnn::train::{
    adam_step, fd_grad, grad, gradient_check, loss, loss_terms, make_dataset, split_indices, train_model, AdamState, TrainConfig, TrainError,
    TrainSample, TrainReport,
};
use meshgnn::eval::RandomPolicy;
use proptest::prelude::*;

fn tiny_gnn(seed: u64) -> GnnConfig {
    GnnConfig { n_layers: 2, embed_dim: 4, mlp_hidden: 4, seed, ..Default::default() }
}

fn preset_samples(horizon: f64) -> Vec<DecisionSample> {
    let (spec, logical) = social_network_preset();
    let g = logical.expand(spec.replicas_per_service, spec.seed);
    let w = WorkloadSpec { arrival_rate: 150.0, horizon, seed: 3, ..Default::default() };
    run_simulation(&g, &w, &mut RandomPolicy::new(3), true).unwrap().samples
}

#[test]
fn split_and_stats_follow_the_training_split() {
    let samples = preset_samples(0.5);
    assert!(samples.len() >= 50);
    let ten = &samples[..10];
    let d = make_dataset(ten, 4).unwrap();
    assert_eq!((d.train.len(), d.validation.len()), (8, 2));
    assert!(make_dataset(&samples[..9], 4).is_err());

    let d = make_dataset(&samples, 9).unwrap();
    let again = make_dataset(&samples, 9).unwrap();
    assert_eq!(d.train, again.train);
    assert_eq!(d.validation, again.validation);

    let (train_idx, _) = split_indices(samples.len(), 9).unwrap();
    let expected = feature_stats(train_idx.iter().map(|&k| &samples[k].snapshot).collect::<Vec<_>>()).unwrap();
    assert_eq!(d.stats, expected);
}

#[test]
fn zero_scorer_gives_log_k_cross_entropy() {
    let mut rng = common::rng(31);
    for _ in 0..10 {
        let s = common::random_sample(&mut rng, 8);
        let k = s.candidates.len() as f64;
        let params = GnnParams::zeros(&tiny_gnn(0));
        let (ce, _) = loss_terms(&[s], &params).unwrap();
        assert!((ce - k.ln()).abs() < 1e-15, "{ce} vs ln {k}");
    }
}

#[test]
fn exact_regression_has_zero_penalty() {
    let mut rng = common::rng(32);
    let mut s = common::random_sample(&mut rng, 6);
    let k = s.candidates.len();
    s.latency_ms = vec![6.5; k];
    s.jitter_ms = vec![1.25; k];
    let mut params = init_params(&tiny_gnn(1)).unwrap();
    params.regressor.w1.fill(0.0);
    params.regressor.w2.fill(0.0);
    // Inverse softplus sets the output exactly on the targets.
    params.regressor.b2.data = vec![6.5f64.exp_m1().ln(), 1.25f64.exp_m1().ln()];
    let (_, reg) = loss_terms(&[s], &params).unwrap();
    assert!(reg < 1e-24, "{reg}");
}

#[test]
fn lambda_zero_is_pure_cross_entropy() {
    let mut rng = common::rng(33);
    let batch: Vec<TrainSample> = (0..4).map(|_| common::random_sample(&mut rng, 6)).collect();
    let params = init_params(&tiny_gnn(2)).unwrap();
    let (ce, reg) = loss_terms(&batch, &params).unwrap();
    assert_eq!(loss(&batch, &params, 0.0).unwrap(), ce);
    assert!((loss(&batch, &params, 0.5).unwrap() - (ce + 0.5 * reg)).abs() < 1e-12);
}

#[test]
fn dead_hidden_units_get_no_gradient() {
    let mut rng = common::rng(34);
    let batch = vec![common::random_sample(&mut rng, 6)];
    let mut params = init_params(&tiny_gnn(3)).unwrap();
    params.scorer.b1.fill(-1e6);
    let (_, g) = grad(&batch, &params, 0.5).unwrap();
    assert!(g.scorer.w2.data.iter().all(|v| *v == 0.0));
    assert!(g.scorer.w1.data.iter().all(|v| *v == 0.0));
}

#[test]
fn adam_update_direction_ignores_loss_scale() {
    let mut rng = common::rng(35);
    let batch: Vec<TrainSample> = (0..3).map(|_| common::random_sample(&mut rng, 6)).collect();
    let params = init_params(&tiny_gnn(4)).unwrap();
    let (_, g) = grad(&batch, &params, 0.5).unwrap();
    let cfg = TrainConfig::default();
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let mut scaled = g.clone();
        scaled.for_each_tensor_mut(|_, m| m.data.iter_mut().for_each(|v| *v *= c));

        let (mut a, mut b) = (params.clone(), params.clone());
        adam_step(&mut a, &g, &mut AdamState::new(&params), &cfg);
        adam_step(&mut b, &scaled, &mut AdamState::new(&params), &cfg);
        let p0 = params.flatten();
        for ((x, y), z) in a.flatten().iter().zip(b.flatten()).zip(&p0) {
            let (da, db) = (x - z, y - z);
            assert!(da.signum() == db.signum() || (da == 0.0 && db == 0.0), "scale {c}: {da} vs {db}");
        }
    }
}

#[test]
fn adam_is_deterministic() {
    let mut rng = common::rng(36);
    let batch = vec![common::random_sample(&mut rng, 6)];
    let params = init_params(&tiny_gnn(5)).unwrap();
    let cfg = TrainConfig::default();
    let run = || {
        let mut p = params.clone();
        let mut state = AdamState::new(&p);
        for _ in 0..5 {
            let (_, g) = grad(&batch, &p, 0.5).unwrap();
            adam_step(&mut p, &g, &mut state, &cfg);
        }
        (p, state)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_epochs_returns_the_initial_parameters() {
    let d = make_dataset(&preset_samples(0.3), 0).unwrap();
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let (params, report) = train_model(&d, &tiny_gnn(6), &cfg).unwrap();
    assert_eq!(params, init_params(&tiny_gnn(6)).unwrap());
    assert!(report.epochs.is_empty());
}

#[test]
fn training_is_bitwise_reproducible() {
    let d = make_dataset(&preset_samples(0.5), 1).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 8, ..Default::default() };
    let (pa, ra) = train_model(&d, &tiny_gnn(7), &cfg).unwrap();
    let (pb, rb) = train_model(&d, &tiny_gnn(7), &cfg).unwrap();
    assert_eq!(pa.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), pb.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert!(ra.same_trajectory(&rb));
    assert_eq!(ra.epochs.len(), 3);

    let mut csv = Vec::new();
    ra.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some(TrainReport::CSV_HEADER));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn divergence_aborts_with_the_partial_report() {
    let d = make_dataset(&preset_samples(0.3), 2).unwrap();
    let cfg = TrainConfig { epochs: 5, learning_rate: 1e300, ..Default::default() };
    match train_model(&d, &tiny_gnn(8), &cfg) {
        Err(TrainError::Divergence { epoch, report }) => assert_eq!(report.epochs.len(), epoch),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn desk_benchmark_learns() {
    let cfg = ExperimentConfig::default();
    let g = cfg.topology.build().unwrap();
    let cfg = cfg.resolve(&g).unwrap();
    let samples = collect_samples(&g, &cfg).unwrap();
    assert!(samples.len() >= 4500, "{} samples", samples.len());
    let d = make_dataset(&samples, cfg.split_seed).unwrap();
    let train = TrainConfig { epochs: 3, ..cfg.train.clone() };
    let (_, report) = train_model(&d, &cfg.gnn, &train).unwrap();
    let first = report.epochs.first().unwrap();
    let last = report.epochs.last().unwrap();
    assert!(last.loss < first.loss, "{} -> {}", first.loss, last.loss);

    let mean_k = d.validation.iter().map(|s| s.candidates.len() as f64).sum::<f64>() / d.validation.len() as f64;
    assert!(last.val_accuracy > 1.0 / mean_k, "{} vs uniform {}", last.val_accuracy, 1.0 / mean_k);
}

/// Central differences of a loss evaluated to within a few ulps cannot resolve
/// gradients below `ulp(L) / 2ε`, so agreement is checked as
/// `|a - n| <= 1e-4 max(|a|, |n|) + 8 ulp(L) / 2ε`.
#[test]
fn gradients_agree_up_to_difference_rounding() {
    let eps = 1e-5;
    let mut checked = 0;
    for seed in 0..20 {
        let mut rng = common::rng(seed);
        for trial in 0..20 {
            let batch = vec![common::random_sample(&mut rng, 6)];
            let cfg = GnnConfig { n_layers: 2, embed_dim: 4, mlp_hidden: 4, seed: trial, ..Default::default() };
            let params = init_params(&cfg).unwrap();
            if gradient_check(&batch, &params, 0.5, eps).unwrap().kinked > 0 {
                continue;
            }
            let (value, a) = grad(&batch, &params, 0.5).unwrap();
            let n = fd_grad(&batch, &params, 0.5, eps).unwrap();
            let atol = 8.0 * value.abs() * f64::EPSILON / (2.0 * eps);
            for (x, y) in a.flatten().iter().zip(n.flatten()) {
                assert!((x - y).abs() <= 1e-4 * x.abs().max(y.abs()) + atol, "seed {seed} trial {trial}: {x} vs {y}");
            }
            checked += 1;
        }
    }
    assert!(checked >= 300, "only {checked} kink-free instances");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loss_is_nonnegative(seed in any::<u64>(), lambda in 0.0f64..3.0) {
        let mut rng = common::rng(seed);
        let batch: Vec<TrainSample> = (0..3).map(|_| common::random_sample(&mut rng, 7)).collect();
        let params = init_params(&tiny_gnn(seed)).unwrap();
        let l = loss(&batch, &params, lambda).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}

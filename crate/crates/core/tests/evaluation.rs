mod common;

use meshgnn::eval::{
    ablation_no_edge_attention, baseline_policy, density_sweep, depth_sweep, evaluate, thin_evenly, BaselineKind,
    ExperimentConfig, GnnPolicy, LeastConnections, OraclePolicy, RandomPolicy, RoundRobin, StaticShortest,
    TopologySource, SWEEP_CSV_HEADER,
};
use meshgnn::gnn::{init_params, layer_attention, layer_forward_with, AttentionMode, GnnConfig};
use meshgnn::graph::{EdgeFeatures, EdgeRecord, FeatureStats, NodeFeatures, ServiceGraph};
use meshgnn::sim::{
    argmin_first, bottleneck_utilization, rate_for_utilization, run_simulation, with_initial_view, Choice,
    DecisionView, RoutingPolicy, WorkloadSpec,
};
use meshgnn::topogen::{social_network_preset, TopologySpec};
use meshgnn::train::TrainConfig;

/// Gateway `0` calling three replicas of one service over links of the given latency.
fn fan_out(latencies: [f64; 3]) -> ServiceGraph {
    let nodes = vec![
        NodeFeatures::new(0.2, 1.0, 0.0),
        NodeFeatures::new(0.2, 3.0, 0.0),
        NodeFeatures::new(0.2, 3.0, 0.0),
        NodeFeatures::new(0.2, 3.0, 0.0),
    ];
    let edges = latencies
        .iter()
        .enumerate()
        .map(|(k, &l)| EdgeRecord { src: 0, dst: k + 1, features: EdgeFeatures::new(l, 0.9, 0.0) })
        .collect();
    ServiceGraph::new(nodes, edges, vec![0, 1, 1, 1]).unwrap()
}

fn preset() -> ServiceGraph {
    let (spec, logical) = social_network_preset();
    logical.expand(spec.replicas_per_service, spec.seed)
}

fn busy(g: &ServiceGraph, horizon: f64, seed: u64) -> WorkloadSpec {
    WorkloadSpec { arrival_rate: rate_for_utilization(g, 0.9).unwrap(), horizon, seed, ..Default::default() }
}

#[test]
fn static_shortest_ignores_congestion() {
    let g = fan_out([5.0, 3.0, 7.0]);
    let w = WorkloadSpec { arrival_rate: 900.0, horizon: 1.0, seed: 1, ..Default::default() };
    let out = run_simulation(&g, &w, &mut StaticShortest, false).unwrap();
    assert!(out.decisions.len() > 500);
    assert!(out.decisions.iter().all(|d| d.chosen == 1));
    // The queue on the favoured replica grows, so the oracle disagrees at times.
    assert!(out.decisions.iter().any(|d| d.oracle_best != 1));
}

#[test]
fn round_robin_cycles() {
    let g = fan_out([5.0, 3.0, 7.0]);
    let mut rr = RoundRobin::default();
    let picks: Vec<usize> = (0..4).map(|_| with_initial_view(&g, 0, &[1, 2, 3], |v| rr.choose(v).index)).collect();
    assert_eq!(picks, vec![0, 1, 2, 0]);
}

/// Wraps a policy and checks its choice against the queues it was shown.
struct CheckLeastConnections {
    inner: LeastConnections,
    checked: usize,
    distinct: usize,
}

impl RoutingPolicy for CheckLeastConnections {
    fn name(&self) -> &str {
        "checked"
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        let queues: Vec<f64> = view.candidates.iter().map(|&c| view.queue_length(c) as f64).collect();
        let choice = self.inner.choose(view);
        assert_eq!(Some(choice.index), argmin_first(&queues), "queues {queues:?}");
        self.checked += 1;
        if queues.iter().any(|&q| q != queues[0]) {
            self.distinct += 1;
        }
        choice
    }
}

#[test]
fn least_connections_takes_the_shortest_queue() {
    let g = preset();
    let mut p = CheckLeastConnections { inner: LeastConnections, checked: 0, distinct: 0 };
    run_simulation(&g, &busy(&g, 1.0, 3), &mut p, false).unwrap();
    assert!(p.checked > 100 && p.distinct > 10, "{} / {}", p.checked, p.distinct);
}

#[test]
fn random_baseline_is_uniform() {
    let g = fan_out([5.0, 3.0, 7.0]);
    let mut r = RandomPolicy::new(5);
    let mut counts = [0usize; 3];
    for _ in 0..30_000 {
        counts[with_initial_view(&g, 0, &[1, 2, 3], |v| r.choose(v).index)] += 1;
    }
    for c in counts {
        assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015, "{counts:?}");
    }
}

#[test]
fn oracle_policy_scores_perfectly() {
    let g = preset();
    let r = evaluate(&g, &busy(&g, 1.0, 4), &mut OraclePolicy).unwrap();
    assert_eq!(r.routing_decision_accuracy, 1.0);
    assert!(r.is_well_formed());
}

#[test]
fn baselines_are_reproducible_and_paired() {
    let g = preset();
    let w = busy(&g, 1.0, 5);
    let mut entries = Vec::new();
    for kind in BaselineKind::ALL {
        let a = evaluate(&g, &w, baseline_policy(kind, 9).as_mut()).unwrap();
        let b = evaluate(&g, &w, baseline_policy(kind, 9).as_mut()).unwrap();
        assert_eq!(a, b);
        assert!(a.is_well_formed());
        assert_eq!(a.policy, kind.as_str());
        let out = run_simulation(&g, &w, baseline_policy(kind, 9).as_mut(), false).unwrap();
        entries.push(out.trace.records.iter().map(|r| (r.t_enter_ms.to_bits(), r.entry_node)).collect::<Vec<_>>());
    }
    assert!(entries.windows(2).all(|w| w[0] == w[1]), "arrivals differ between policies");
}

#[test]
fn uniform_ablation_uses_plain_means() {
    let mut rng = common::rng(41);
    let g = common::random_graph(&mut rng, 9, 0.4);
    let cfg = ablation_no_edge_attention(&GnnConfig { n_layers: 2, embed_dim: 5, seed: 3, ..Default::default() });
    assert_eq!(cfg.attention, AttentionMode::Uniform);
    let params = init_params(&cfg).unwrap();
    let emb = meshgnn::gnn::encode(&g, &params).unwrap();
    for (l, layer) in params.layers.iter().enumerate() {
        let alpha = layer_attention(&emb.layers[l], &g, layer, cfg.leaky_slope, cfg.attention).unwrap();
        for i in 0..g.n_nodes() {
            let out = g.out_edges(i);
            for &e in out {
                assert_eq!(alpha[e], 1.0 / out.len() as f64);
            }
        }
        let constants: Vec<f64> = (0..g.n_edges()).map(|e| 1.0 / g.out_edges(g.edge(e).src).len() as f64).collect();
        assert_eq!(emb.layers[l + 1], layer_forward_with(&emb.layers[l], &g, layer, &constants).unwrap());
    }
}

#[test]
fn model_policies_go_through_the_same_evaluation() {
    let g = preset();
    let w = busy(&g, 0.5, 6);
    let cfg = GnnConfig { embed_dim: 6, n_layers: 2, ..Default::default() };
    for variant in [cfg.clone(), ablation_no_edge_attention(&cfg)] {
        let params = init_params(&variant).unwrap();
        let mut policy = GnnPolicy::new("model", params, FeatureStats::identity());
        let r = evaluate(&g, &w, &mut policy).unwrap();
        assert!(r.is_well_formed());
        assert!(r.n_decisions > 0 && r.n_paths > 0);
    }
}

#[test]
fn utilization_helpers_invert() {
    let g = preset();
    for rho in [0.1, 0.5, 0.8, 1.2] {
        let rate = rate_for_utilization(&g, rho).unwrap();
        assert!((bottleneck_utilization(&g, rate).unwrap() - rho).abs() < 1e-12);
    }
    assert!(rate_for_utilization(&g, 0.0).is_err());
}

#[test]
fn thinning_keeps_evenly_spaced_items() {
    assert_eq!(thin_evenly((0..10).collect(), 5), vec![0, 2, 4, 6, 8]);
    assert_eq!(thin_evenly((0..3).collect(), 5), vec![0, 1, 2]);
    assert_eq!(thin_evenly((0..7).collect(), 0), Vec::<i32>::new());
    assert_eq!(thin_evenly((0..1000).collect::<Vec<_>>(), 300).len(), 300);
}

fn small_experiment() -> ExperimentConfig {
    ExperimentConfig {
        topology: TopologySource::Generated(TopologySpec {
            n_services: 12,
            replicas_per_service: 2,
            avg_out_degree: 2.0,
            seed: 0,
            layered: true,
        }),
        collect: WorkloadSpec { horizon: 2.0, ..Default::default() },
        evaluate: WorkloadSpec { horizon: 0.5, ..Default::default() },
        gnn: GnnConfig { embed_dim: 4, mlp_hidden: 4, ..Default::default() },
        train: TrainConfig { epochs: 1, ..Default::default() },
        collect_samples: Some(150),
        ..Default::default()
    }
}

fn csv(t: &meshgnn::eval::SweepTable) -> String {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn depth_sweep_shape_and_determinism() {
    let base = small_experiment();
    let one = depth_sweep(&base, &[2], &[7]).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.rows[0].seed_count, 1);
    assert_eq!(one.rows[0].acc_std, 0.0);

    let t = depth_sweep(&base, &[2, 3], &[1, 2]).unwrap();
    assert_eq!(t.rows.iter().map(|r| r.param).collect::<Vec<_>>(), vec![2.0, 3.0]);
    assert!(t.rows.iter().all(|r| r.seed_count == 2));
    assert_eq!(t.cells.len(), 4);
    assert!(t.cells.iter().all(|c| c.config.gnn.n_layers as f64 == c.param && c.report.is_well_formed()));
    let again = depth_sweep(&base, &[2, 3], &[1, 2]).unwrap();
    assert_eq!(csv(&t), csv(&again));
    assert_eq!(t.to_json().unwrap(), again.to_json().unwrap());
    assert_eq!(csv(&t).lines().next(), Some(SWEEP_CSV_HEADER));
}

#[test]
fn density_sweep_hits_the_requested_degree() {
    let base = small_experiment();
    let t = density_sweep(&base, &[2.5], &[1]).unwrap();
    assert_eq!(t.rows.len(), 1);
    let realized = t.cells[0].realized_out_degree;
    assert!((realized - 2.5).abs() <= 0.25, "realized {realized}");

    let t = density_sweep(&base, &[1.5, 3.0], &[3]).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(csv(&t), csv(&density_sweep(&base, &[1.5, 3.0], &[3]).unwrap()));

    let preset_base = ExperimentConfig { topology: TopologySource::default(), ..base.clone() };
    assert!(density_sweep(&preset_base, &[2.0], &[1]).is_err());
    assert!(density_sweep(&base, &[20.0], &[1]).is_err());
    assert!(depth_sweep(&base, &[], &[1]).is_err());
}

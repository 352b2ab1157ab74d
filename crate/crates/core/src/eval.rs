//! Metrics, baseline policies, and the depth/density sweeps.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{decide, GnnConfig, GnnError, GnnParams};
use crate::graph::{normalize_features, FeatureStats, GraphError, ServiceGraph};
use crate::sim::{
    argmin_first, counterfactual_hops, measure_jitter, rate_for_utilization, run_simulation, Choice, DecisionSample,
    DecisionView, HopPrediction, RoutingPolicy, SimError, SimOutput, WorkloadSpec, JITTER_WINDOW, TELEMETRY_WINDOW_MS,
};
use crate::topogen::{generate_topology, social_network_preset, TopologyError, TopologySpec};
use crate::train::{make_dataset, train_model, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown baseline '{0}' (expected static-shortest, round-robin, least-connections or random)")]
    UnknownBaseline(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `mean |pred − actual| / actual`.
pub fn mean_relative_error(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != actual.len() || actual.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "need equal non-empty lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    if let Some(a) = actual.iter().find(|a| !(**a > 0.0)) {
        return Err(EvalError::InvalidInput(format!("actual latency must be > 0, got {a}")));
    }
    Ok(predicted.iter().zip(actual).map(|(p, a)| (p - a).abs() / a).sum::<f64>() / actual.len() as f64)
}

/// Mean absolute error in ms.
pub fn jitter_prediction_error(predicted: &[f64], measured: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != measured.len() || measured.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "need equal non-empty lengths, got {} and {}",
            predicted.len(),
            measured.len()
        )));
    }
    Ok(predicted.iter().zip(measured).map(|(p, m)| (p - m).abs()).sum::<f64>() / measured.len() as f64)
}

/// Fraction of `(chosen, oracle_best)` pairs that agree.
pub fn routing_accuracy(decisions: &[(usize, usize)]) -> Result<f64, EvalError> {
    if decisions.is_empty() {
        return Err(EvalError::InvalidInput("no decisions".into()));
    }
    Ok(decisions.iter().filter(|(c, b)| c == b).count() as f64 / decisions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    StaticShortest,
    RoundRobin,
    LeastConnections,
    Random,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] =
        [Self::StaticShortest, Self::RoundRobin, Self::LeastConnections, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::StaticShortest => "static-shortest",
            Self::RoundRobin => "round-robin",
            Self::LeastConnections => "least-connections",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| EvalError::UnknownBaseline(s.into()))
    }
}

/// Builds a baseline. `seed` only matters for `Random`.
pub fn baseline_policy(kind: BaselineKind, seed: u64) -> Box<dyn RoutingPolicy + Send> {
    match kind {
        BaselineKind::StaticShortest => Box::new(StaticShortest),
        BaselineKind::RoundRobin => Box::new(RoundRobin::default()),
        BaselineKind::LeastConnections => Box::new(LeastConnections),
        BaselineKind::Random => Box::new(RandomPolicy::new(seed)),
    }
}

/// Minimum warm-start link latency; ignores everything that happens afterwards.
#[derive(Debug, Clone, Default)]
pub struct StaticShortest;

impl RoutingPolicy for StaticShortest {
    fn name(&self) -> &str {
        "static-shortest"
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        let g = view.initial_graph();
        let cost: Vec<f64> =
            (0..view.candidates.len()).map(|c| g.edge(view.edge_to(c)).features.latency_ewma).collect();
        argmin_first(&cost).unwrap_or(0).into()
    }
}

/// Cycles through the candidates, one counter per (source, service).
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    next: HashMap<(usize, usize), usize>,
}

impl RoutingPolicy for RoundRobin {
    fn name(&self) -> &str {
        "round-robin"
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        let slot = self.next.entry((view.source, view.service)).or_insert(0);
        let pick = *slot % view.candidates.len();
        *slot = slot.wrapping_add(1);
        pick.into()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LeastConnections;

impl RoutingPolicy for LeastConnections {
    fn name(&self) -> &str {
        "least-connections"
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        let q: Vec<f64> = view.candidates.iter().map(|&j| view.queue_length(j) as f64).collect();
        argmin_first(&q).unwrap_or(0).into()
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl RoutingPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        self.rng.random_range(0..view.candidates.len()).into()
    }
}

/// Picks the counterfactual optimum and reports its expected latency and jitter.
#[derive(Debug, Clone, Default)]
pub struct OraclePolicy;

impl RoutingPolicy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        let hops = counterfactual_hops(
            view.hop_model(),
            view.initial_graph(),
            &view.queue_lengths(),
            view.source,
            view.candidates,
        )
        .expect("candidates are neighbors");
        let index = argmin_first(&hops.iter().map(|h| h.0).collect::<Vec<_>>()).unwrap_or(0);
        let (latency_ms, jitter_ms) = hops[index];
        Choice { index, prediction: Some(HopPrediction { latency_ms, jitter_ms }) }
    }
}

/// Greedy routing with a trained model on normalized live telemetry.
#[derive(Debug, Clone)]
pub struct GnnPolicy {
    name: String,
    params: GnnParams,
    stats: FeatureStats,
}

impl GnnPolicy {
    pub fn new(name: impl Into<String>, params: GnnParams, stats: FeatureStats) -> Self {
        Self { name: name.into(), params, stats }
    }
}

impl RoutingPolicy for GnnPolicy {
    fn name(&self) -> &str {
        &self.name
    }
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice {
        let d = normalize_features(&view.snapshot(), &self.stats)
            .ok()
            .and_then(|g| decide(&g, &self.params, view.source, view.candidates).ok());
        match d {
            Some(d) => {
                let (latency_ms, jitter_ms) = d.predictions[d.chosen];
                Choice { index: d.chosen, prediction: Some(HopPrediction { latency_ms, jitter_ms }) }
            }
            // Non-finite scores: fall back to the first candidate without a prediction.
            None => 0.into(),
        }
    }
}

/// Uniform-attention variant of a model configuration.
pub fn ablation_no_edge_attention(cfg: &GnnConfig) -> GnnConfig {
    cfg.uniform_attention()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub policy: String,
    pub mean_relative_error: f64,
    /// ms
    pub jitter_prediction_error: f64,
    pub routing_decision_accuracy: f64,
    pub n_decisions: usize,
    /// Completed requests entering the latency error.
    pub n_paths: usize,
    pub workload: WorkloadSpec,
}

impl MetricsReport {
    pub fn is_well_formed(&self) -> bool {
        self.mean_relative_error >= 0.0
            && self.jitter_prediction_error >= 0.0
            && (0.0..=1.0).contains(&self.routing_decision_accuracy)
    }
}

/// Runs `policy` over the workload and scores every decision against the oracle.
///
/// Latency error compares, per completed request, the sum of the hop
/// predictions with the realized path latency. A policy that attaches no
/// prediction is credited with the chosen link's latency EWMA and the link's
/// windowed jitter, as observed at decision time. Measured jitter is the
/// chosen link's hop-latency deviation over the last [`JITTER_WINDOW`] hops of the run.
pub fn evaluate(g: &ServiceGraph, w: &WorkloadSpec, policy: &mut dyn RoutingPolicy) -> Result<MetricsReport, EvalError> {
    let out = run_simulation(g, w, policy, false)?;
    metrics_from_run(policy.name(), w, &out)
}

pub fn metrics_from_run(policy: &str, w: &WorkloadSpec, out: &SimOutput) -> Result<MetricsReport, EvalError> {
    if out.decisions.is_empty() {
        return Err(EvalError::InvalidInput("the run made no routing decisions".into()));
    }
    let pairs: Vec<(usize, usize)> = out.decisions.iter().map(|d| (d.chosen, d.oracle_best)).collect();
    let accuracy = routing_accuracy(&pairs)?;

    let mut predicted_path = vec![0.0; out.trace.records.len()];
    let mut jitter_pred = Vec::with_capacity(out.decisions.len());
    let mut jitter_meas = Vec::with_capacity(out.decisions.len());
    let mut measured: HashMap<(usize, usize), f64> = HashMap::new();
    for d in &out.decisions {
        let (lat, jit) = match d.prediction {
            Some(p) => (p.latency_ms, p.jitter_ms),
            None => (d.ewma_latency_ms, d.window_jitter_ms),
        };
        predicted_path[d.request as usize] += lat;
        let edge = (d.source, d.candidates[d.chosen]);
        let m = *measured.entry(edge).or_insert_with(|| measure_jitter(&out.trace, edge, JITTER_WINDOW));
        jitter_pred.push(jit);
        jitter_meas.push(m);
    }
    let (mut pred, mut actual) = (Vec::new(), Vec::new());
    for r in out.trace.records.iter().filter(|r| r.completed && !r.hops.is_empty()) {
        pred.push(predicted_path[r.request_id as usize]);
        actual.push(r.path_latency_ms());
    }
    let mre = if actual.is_empty() { f64::NAN } else { mean_relative_error(&pred, &actual)? };
    Ok(MetricsReport {
        policy: policy.to_string(),
        mean_relative_error: mre,
        jitter_prediction_error: jitter_prediction_error(&jitter_pred, &jitter_meas)?,
        routing_decision_accuracy: accuracy,
        n_decisions: out.decisions.len(),
        n_paths: actual.len(),
        workload: w.clone(),
    })
}

/// Where an experiment's graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySource {
    /// The fixed twelve-service call graph; `seed` draws the warm-start telemetry.
    SocialNetwork { replicas_per_service: usize, seed: u64 },
    Generated(TopologySpec),
}

impl Default for TopologySource {
    fn default() -> Self {
        let (spec, _) = social_network_preset();
        TopologySource::SocialNetwork { replicas_per_service: spec.replicas_per_service, seed: spec.seed }
    }
}

impl TopologySource {
    pub fn build(&self) -> Result<ServiceGraph, EvalError> {
        match self {
            TopologySource::SocialNetwork { replicas_per_service, seed } => {
                if *replicas_per_service == 0 {
                    return Err(TopologyError::NoReplicas.into());
                }
                Ok(social_network_preset().1.expand(*replicas_per_service, *seed))
            }
            TopologySource::Generated(spec) => Ok(generate_topology(spec)?),
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        match self {
            TopologySource::SocialNetwork { replicas_per_service, .. } => {
                TopologySource::SocialNetwork { replicas_per_service: *replicas_per_service, seed }
            }
            TopologySource::Generated(spec) => TopologySource::Generated(TopologySpec { seed, ..spec.clone() }),
        }
    }
}

/// Everything needed to train and evaluate one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    /// Traffic that produces the training samples (routed uniformly at random).
    pub collect: WorkloadSpec,
    /// Held-out traffic every policy is evaluated on.
    pub evaluate: WorkloadSpec,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub split_seed: u64,
    /// When set, both arrival rates are replaced by the rate that loads the
    /// busiest replica to this utilization (before bursts).
    #[serde(default)]
    pub target_utilization: Option<f64>,
    /// When set, decisions from the first telemetry window are dropped and the
    /// rest thinned evenly to this many samples.
    #[serde(default)]
    pub collect_samples: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: TopologySource::default(),
            collect: WorkloadSpec { seed: 1, ..Default::default() },
            evaluate: WorkloadSpec { horizon: 4.0, seed: 2, ..Default::default() },
            gnn: GnnConfig::default(),
            train: TrainConfig { epochs: 15, learning_rate: 3e-3, ..Default::default() },
            split_seed: 0,
            target_utilization: Some(0.8),
            collect_samples: Some(5000),
        }
    }
}

impl ExperimentConfig {
    /// Copy with `target_utilization` turned into concrete arrival rates for graph `g`.
    pub fn resolve(&self, g: &ServiceGraph) -> Result<ExperimentConfig, EvalError> {
        let mut c = self.clone();
        if let Some(rho) = self.target_utilization {
            let rate = rate_for_utilization(g, rho)?;
            c.collect.arrival_rate = rate;
            c.evaluate.arrival_rate = rate;
            c.target_utilization = None;
        }
        Ok(c)
    }

    /// Derives every seed in the experiment from one value.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.topology = self.topology.with_seed(seed);
        c.collect.seed = seed;
        c.evaluate.seed = seed ^ 0x5151_7e57;
        c.gnn.seed = seed;
        c.train.seed = seed;
        c.split_seed = seed;
        c
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: GnnParams,
    pub stats: FeatureStats,
    pub report: TrainReport,
    pub n_samples: usize,
}

impl TrainedModel {
    pub fn policy(&self, name: &str) -> GnnPolicy {
        GnnPolicy::new(name, self.params.clone(), self.stats.clone())
    }

    pub fn final_val_accuracy(&self) -> f64 {
        self.report.epochs.last().map_or(0.0, |e| e.val_accuracy)
    }
}

/// Training samples from the collection workload under random routing.
pub fn collect_samples(g: &ServiceGraph, cfg: &ExperimentConfig) -> Result<Vec<DecisionSample>, EvalError> {
    let all = run_simulation(g, &cfg.collect, &mut RandomPolicy::new(cfg.collect.seed), true)?.samples;
    Ok(match cfg.collect_samples {
        None => all,
        Some(n) => {
            let warm: Vec<DecisionSample> = all.into_iter().filter(|s| s.time_ms >= TELEMETRY_WINDOW_MS).collect();
            thin_evenly(warm, n)
        }
    })
}

/// Keeps `n` items at evenly spaced positions (all of them when there are fewer).
pub fn thin_evenly<T>(items: Vec<T>, n: usize) -> Vec<T> {
    let len = items.len();
    if len <= n {
        return items;
    }
    let mut next = 0usize;
    items
        .into_iter()
        .enumerate()
        .filter(|(k, _)| {
            let keep = next < n && *k == next * len / n;
            next += usize::from(keep);
            keep
        })
        .map(|(_, x)| x)
        .collect()
}

/// Collects samples under random routing, then trains `gnn`. `cfg` should be resolved.
pub fn train_on(g: &ServiceGraph, cfg: &ExperimentConfig, gnn: &GnnConfig) -> Result<TrainedModel, EvalError> {
    let samples = collect_samples(g, cfg)?;
    let dataset = make_dataset(&samples, cfg.split_seed)?;
    let (params, report) = train_model(&dataset, gnn, &cfg.train)?;
    Ok(TrainedModel { params, stats: dataset.stats, report, n_samples: samples.len() })
}

/// Trains one model and evaluates it on the held-out workload.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(MetricsReport, TrainedModel), EvalError> {
    let g = cfg.topology.build()?;
    let cfg = &cfg.resolve(&g)?;
    let model = train_on(&g, cfg, &cfg.gnn)?;
    let report = evaluate(&g, &cfg.evaluate, &mut model.policy("gnn"))?;
    Ok((report, model))
}

pub const SWEEP_CSV_HEADER: &str = "param,seed_count,mre_mean,mre_std,jitter_mean,jitter_std,acc_mean,acc_std";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub seed_count: usize,
    pub mre_mean: f64,
    pub mre_std: f64,
    pub jitter_mean: f64,
    pub jitter_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub param: f64,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub report: MetricsReport,
    /// Mean out-degree of the logical call graph.
    pub realized_out_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub param_name: String,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.param, r.seed_count, r.mre_mean, r.mre_std, r.jitter_mean, r.jitter_std, r.acc_mean, r.acc_std
            )?;
        }
        Ok(())
    }

    /// Config echo: every cell's full configuration plus its metrics.
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Mean out-degree over services of the call graph behind `g`.
pub fn logical_out_degree(g: &ServiceGraph) -> f64 {
    let succ = g.logical_successors();
    succ.iter().map(Vec::len).sum::<usize>() as f64 / succ.len().max(1) as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, crate::sim::population_std(values.iter().copied()))
}

fn run_sweep(
    param_name: &str,
    params: &[f64],
    seeds: &[u64],
    make: impl Fn(f64, u64) -> ExperimentConfig + Sync,
) -> Result<SweepTable, EvalError> {
    if params.is_empty() || seeds.is_empty() {
        return Err(EvalError::InvalidInput(format!("{param_name} sweep needs at least one value and one seed")));
    }
    let grid: Vec<(f64, u64)> = params.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(param, seed)| {
            let g = make(param, seed).topology.build()?;
            let config = make(param, seed).resolve(&g)?;
            let realized_out_degree = logical_out_degree(&g);
            let (report, _) = run_experiment(&config)?;
            Ok(SweepCell { param, seed, config, report, realized_out_degree })
        })
        .collect::<Result<_, EvalError>>()?;
    let rows = params
        .iter()
        .map(|&p| {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.param == p).collect();
            let col = |f: fn(&MetricsReport) -> f64| mean_std(&group.iter().map(|c| f(&c.report)).collect::<Vec<_>>());
            let (mre_mean, mre_std) = col(|r| r.mean_relative_error);
            let (jitter_mean, jitter_std) = col(|r| r.jitter_prediction_error);
            let (acc_mean, acc_std) = col(|r| r.routing_decision_accuracy);
            SweepRow { param: p, seed_count: group.len(), mre_mean, mre_std, jitter_mean, jitter_std, acc_mean, acc_std }
        })
        .collect();
    Ok(SweepTable { param_name: param_name.into(), rows, cells })
}

pub const DEFAULT_DEPTHS: [usize; 5] = [2, 3, 4, 5, 6];
pub const DEFAULT_DEGREES: [f64; 6] = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

/// One trained model per (layer count, seed).
pub fn depth_sweep(base: &ExperimentConfig, layers: &[usize], seeds: &[u64]) -> Result<SweepTable, EvalError> {
    if layers.contains(&0) {
        return Err(EvalError::InvalidInput("layer counts must be >= 1".into()));
    }
    let values: Vec<f64> = layers.iter().map(|&l| l as f64).collect();
    run_sweep("n_layers", &values, seeds, |l, seed| {
        let mut c = base.with_seed(seed);
        c.gnn.n_layers = l as usize;
        c
    })
}

/// One generated topology and trained model per (average out-degree, seed).
pub fn density_sweep(base: &ExperimentConfig, degrees: &[f64], seeds: &[u64]) -> Result<SweepTable, EvalError> {
    let TopologySource::Generated(spec) = &base.topology else {
        return Err(EvalError::InvalidInput("density sweep needs a generated topology".into()));
    };
    for &d in degrees {
        TopologySpec { avg_out_degree: d, ..spec.clone() }.validate()?;
    }
    run_sweep("avg_out_degree", degrees, seeds, |d, seed| {
        let mut c = base.with_seed(seed);
        if let TopologySource::Generated(s) = &mut c.topology {
            s.avg_out_degree = d;
        }
        c
    })
}

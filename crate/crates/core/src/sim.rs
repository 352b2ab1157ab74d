//! Discrete-event simulation of request traffic over a [`ServiceGraph`].
//!
//! Every replica is a single FIFO server with exponential service times whose
//! mean is the replica's warm-start `response_time_ewma`. A request enters at a
//! replica of an entry service (one with no callers) and walks one path of the
//! logical call graph; at each hop a [`RoutingPolicy`] picks the downstream
//! replica. Link latency is lognormal with mean equal to the edge's warm-start
//! `latency_ewma` and log-scale sigma `1 - stability`.
//!
//! All randomness is drawn from per-purpose ChaCha streams: arrivals from one
//! stream, and everything a request needs (entry replica, path, service and
//! link draws) from a stream keyed by the request id. Two runs that differ only
//! in routing policy therefore see the same arrival process and the same
//! standardized per-request draws.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeFeatures, NodeFeatures, NodeId, ServiceGraph, ServiceId};
use crate::topogen::topological_order;

/// Trailing window for the cpu proxy and call frequency, in ms.
pub const TELEMETRY_WINDOW_MS: f64 = 1000.0;
/// Observations per sliding jitter window.
pub const JITTER_WINDOW: usize = 32;
/// Requests arrive at `burst_factor` times the base rate for the first
/// `BURST_LEN_S` of every `BURST_PERIOD_S`.
pub const BURST_PERIOD_S: f64 = 10.0;
pub const BURST_LEN_S: f64 = 2.0;
pub const DEFAULT_EWMA_ALPHA: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("logical call graph has a cycle")]
    CyclicCallGraph,
    #[error("policy '{policy}' chose index {chosen} of {n_candidates} candidates (request {request}, source node {node})")]
    PolicyOutOfRange { policy: String, request: u64, node: NodeId, chosen: usize, n_candidates: usize },
    #[error("no candidates")]
    NoCandidates,
    #[error("candidate {0} is not reachable from the source")]
    NotANeighbor(NodeId),
    #[error("trace io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    /// Requests per second.
    pub arrival_rate: f64,
    /// Simulated seconds.
    pub horizon: f64,
    pub seed: u64,
    pub burst_factor: f64,
    pub ewma_alpha: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self { arrival_rate: 200.0, horizon: 10.0, seed: 0, burst_factor: 1.5, ewma_alpha: DEFAULT_EWMA_ALPHA }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidWorkload(m.to_string()));
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad("arrival_rate must be > 0");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon must be > 0");
        }
        if !(self.burst_factor.is_finite() && self.burst_factor >= 1.0) {
            return bad("burst_factor must be >= 1");
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return bad("ewma_alpha must be in (0, 1]");
        }
        Ok(())
    }

    /// Expected number of arrivals over the horizon.
    pub fn expected_arrivals(&self) -> f64 {
        let full = (self.horizon / BURST_PERIOD_S).floor();
        let rest = self.horizon - full * BURST_PERIOD_S;
        let burst_time = full * BURST_LEN_S + rest.min(BURST_LEN_S);
        self.arrival_rate * (self.horizon + (self.burst_factor - 1.0) * burst_time)
    }

    /// Horizon (s) at which [`Self::expected_arrivals`] reaches `n`.
    pub fn horizon_for_arrivals(&self, n: f64) -> f64 {
        let at = |h: f64| WorkloadSpec { horizon: h, ..self.clone() }.expected_arrivals();
        let (mut lo, mut hi) = (0.0, 1.0);
        while at(hi) < n {
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if at(mid) < n {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn rate_per_ms(&self, t_ms: f64) -> f64 {
        let phase = (t_ms / 1000.0) % BURST_PERIOD_S;
        let factor = if phase < BURST_LEN_S { self.burst_factor } else { 1.0 };
        self.arrival_rate * factor / 1000.0
    }

    /// Next rate change strictly after `t_ms`.
    fn next_rate_change_ms(&self, t_ms: f64) -> f64 {
        let period = BURST_PERIOD_S * 1000.0;
        let start = (t_ms / period).floor() * period;
        let burst_end = start + BURST_LEN_S * 1000.0;
        if t_ms < burst_end {
            burst_end
        } else {
            start + period
        }
    }
}

/// Static service and link characteristics, fixed from the warm-start graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HopModel {
    pub mean_service_ms: Vec<f64>,
    /// Mean link latency per edge.
    pub link_mean_ms: Vec<f64>,
    /// Log-scale sigma of link latency per edge.
    pub link_sigma: Vec<f64>,
}

impl HopModel {
    pub fn from_graph(g: &ServiceGraph) -> Self {
        Self {
            mean_service_ms: g.nodes().iter().map(|n| n.response_time_ewma).collect(),
            link_mean_ms: g.edges().iter().map(|e| e.features.latency_ewma).collect(),
            link_sigma: g.edges().iter().map(|e| (1.0 - e.features.stability).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Expected hop latency and its standard deviation for a call that joins
    /// `dst` behind `queue_length` jobs, under exponential service.
    pub fn counterfactual(&self, edge: usize, dst: NodeId, queue_length: f64) -> (f64, f64) {
        let s = self.mean_service_ms[dst];
        let b = self.link_mean_ms[edge];
        let sigma = self.link_sigma[edge];
        let jobs = queue_length + 1.0;
        let link_var = b * b * (sigma * sigma).exp_m1();
        (jobs * s + b, (jobs * s * s + link_var).sqrt())
    }
}

/// First index of the minimum; `None` for an empty slice.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v < values[b]) {
            best = Some(k);
        }
    }
    best
}

/// Counterfactual `(latency, jitter)` per candidate under frozen queue lengths.
pub fn counterfactual_hops(
    model: &HopModel,
    g: &ServiceGraph,
    queue_length: &[f64],
    source: NodeId,
    candidates: &[NodeId],
) -> Result<Vec<(f64, f64)>, SimError> {
    candidates
        .iter()
        .map(|&j| {
            let e = g.find_edge(source, j).ok_or(SimError::NotANeighbor(j))?;
            Ok(model.counterfactual(e, j, queue_length[j]))
        })
        .collect()
}

/// Candidate with the lowest expected hop latency; ties go to the lowest index.
pub fn oracle_best_candidate(
    model: &HopModel,
    g: &ServiceGraph,
    queue_length: &[f64],
    source: NodeId,
    candidates: &[NodeId],
) -> Result<usize, SimError> {
    if candidates.is_empty() {
        return Err(SimError::NoCandidates);
    }
    let lat: Vec<f64> =
        counterfactual_hops(model, g, queue_length, source, candidates)?.iter().map(|h| h.0).collect();
    Ok(argmin_first(&lat).expect("non-empty"))
}

/// Population standard deviation; 0 with fewer than two values.
pub fn population_std(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().into_iter().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.into_iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / n as f64).sqrt()
}

/// Expected visits per request to each service: uniform entry over services
/// without callers, then a uniform walk over logical successors.
pub fn service_visit_rates(g: &ServiceGraph) -> Result<Vec<f64>, SimError> {
    let successors = g.logical_successors();
    let n = successors.len();
    let calls: Vec<_> = successors.iter().enumerate().flat_map(|(a, s)| s.iter().map(move |&b| (a, b))).collect();
    let order = topological_order(n, &calls).ok_or(SimError::CyclicCallGraph)?;
    let replicas = g.replicas_by_service();
    let mut has_caller = vec![false; n];
    for &(_, b) in &calls {
        has_caller[b] = true;
    }
    let entries: Vec<ServiceId> = (0..n).filter(|&s| !has_caller[s] && !replicas[s].is_empty()).collect();
    let mut visits = vec![0.0; n];
    for &s in &entries {
        visits[s] = 1.0 / entries.len() as f64;
    }
    for s in order {
        let next = &successors[s];
        for &b in next {
            visits[b] += visits[s] / next.len() as f64;
        }
    }
    Ok(visits)
}

/// Highest per-replica utilization at `arrival_rate` (req/s) with traffic spread
/// evenly over replicas and no bursts.
pub fn bottleneck_utilization(g: &ServiceGraph, arrival_rate: f64) -> Result<f64, SimError> {
    let visits = service_visit_rates(g)?;
    let model = HopModel::from_graph(g);
    let mut worst: f64 = 0.0;
    for (s, reps) in g.replicas_by_service().iter().enumerate() {
        if reps.is_empty() {
            continue;
        }
        let mean_ms = reps.iter().map(|&r| model.mean_service_ms[r]).sum::<f64>() / reps.len() as f64;
        worst = worst.max(arrival_rate * visits[s] * mean_ms / 1000.0 / reps.len() as f64);
    }
    Ok(worst)
}

/// Arrival rate at which [`bottleneck_utilization`] equals `target`.
pub fn rate_for_utilization(g: &ServiceGraph, target: f64) -> Result<f64, SimError> {
    let per_unit = bottleneck_utilization(g, 1.0)?;
    if !(target > 0.0) || per_unit <= 0.0 {
        return Err(SimError::InvalidWorkload(format!("cannot reach utilization {target}")));
    }
    Ok(target / per_unit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hop {
    pub src: NodeId,
    pub dst: NodeId,
    pub queue_ms: f64,
    /// Link latency + queue wait + service time.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub request_id: u64,
    pub t_enter_ms: f64,
    pub entry_node: NodeId,
    /// Completed routed hops, in path order.
    pub hops: Vec<Hop>,
    pub completed: bool,
}

impl RequestRecord {
    pub fn path_latency_ms(&self) -> f64 {
        self.hops.iter().map(|h| h.latency_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Ordered by entry time (equivalently request id).
    pub records: Vec<RequestRecord>,
    pub completed_count: usize,
    pub inflight_at_horizon: usize,
}

pub const TRACE_CSV_HEADER: [&str; 6] = ["request_id", "t_enter_ms", "src", "dst", "queue_ms", "latency_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub request_id: u64,
    pub t_enter_ms: f64,
    pub src: NodeId,
    pub dst: NodeId,
    pub queue_ms: f64,
    pub latency_ms: f64,
}

impl Trace {
    pub fn injected(&self) -> usize {
        self.records.len()
    }

    /// One row per completed hop.
    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        self.records.iter().flat_map(|r| {
            r.hops.iter().map(move |h| TraceRow {
                request_id: r.request_id,
                t_enter_ms: r.t_enter_ms,
                src: h.src,
                dst: h.dst,
                queue_ms: h.queue_ms,
                latency_ms: h.latency_ms,
            })
        })
    }

    pub fn hop_latencies(&self, src: NodeId, dst: NodeId) -> Vec<f64> {
        self.rows().filter(|r| r.src == src && r.dst == dst).map(|r| r.latency_ms).collect()
    }

    pub fn mean_queue_ms(&self) -> f64 {
        let (n, sum) = self.rows().fold((0usize, 0.0), |(n, s), r| (n + 1, s + r.queue_ms));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io(e.to_string());
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(TRACE_CSV_HEADER).map_err(io)?;
        for row in self.rows() {
            out.serialize(row).map_err(io)?;
        }
        out.flush().map_err(|e| SimError::Io(e.to_string()))
    }
}

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<TraceRow>, SimError> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(|e| SimError::Io(e.to_string()))?;
    if header.iter().ne(TRACE_CSV_HEADER) {
        return Err(SimError::Io(format!("unexpected trace header {header:?}")));
    }
    reader.deserialize().map(|row| row.map_err(|e| SimError::Io(e.to_string()))).collect()
}

/// Population std of the last `window` hop latencies on `src -> dst`, in trace order.
pub fn measure_jitter(trace: &Trace, edge: (NodeId, NodeId), window: usize) -> f64 {
    let window = window.max(1);
    let lat = trace.hop_latencies(edge.0, edge.1);
    population_std(lat[lat.len().saturating_sub(window)..].iter().copied())
}

/// One labelled routing decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSample {
    /// Raw telemetry at decision time; normalization is applied when a dataset is built.
    pub snapshot: ServiceGraph,
    pub source: NodeId,
    pub candidates: Vec<NodeId>,
    pub oracle_best: usize,
    /// Counterfactual expected hop latency per candidate.
    pub realized_latency_ms: Vec<f64>,
    /// Counterfactual hop latency standard deviation per candidate.
    pub realized_jitter_ms: Vec<f64>,
    /// Simulated time of the decision.
    #[serde(default)]
    pub time_ms: f64,
}

impl DecisionSample {
    pub fn to_json_line(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string(self)
    }
}

pub fn write_samples_jsonl<W: Write>(samples: &[DecisionSample], mut w: W) -> std::io::Result<()> {
    for s in samples {
        writeln!(w, "{}", s.to_json_line().map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

pub fn read_samples_jsonl<R: BufRead>(r: R) -> Result<Vec<DecisionSample>, SimError> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let line = line.map_err(|e| SimError::Io(e.to_string()))?;
            serde_json::from_str(&line).map_err(|e| SimError::Io(e.to_string()))
        })
        .collect()
}

/// A hop prediction a policy may attach to its choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopPrediction {
    pub latency_ms: f64,
    pub jitter_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub index: usize,
    pub prediction: Option<HopPrediction>,
}

impl From<usize> for Choice {
    fn from(index: usize) -> Self {
        Self { index, prediction: None }
    }
}

/// Picks one replica from the candidate set at each hop.
pub trait RoutingPolicy {
    fn name(&self) -> &str;
    fn choose(&mut self, view: &DecisionView<'_>) -> Choice;
}

/// What a policy can observe at a decision point.
pub struct DecisionView<'a> {
    pub time_ms: f64,
    pub request: u64,
    pub source: NodeId,
    pub service: ServiceId,
    pub candidates: &'a [NodeId],
    sim: &'a SimState<'a>,
}

impl DecisionView<'_> {
    pub fn queue_length(&self, node: NodeId) -> usize {
        self.sim.replicas[node].queue_length()
    }

    /// Warm-start graph the simulation was built from.
    pub fn initial_graph(&self) -> &ServiceGraph {
        self.sim.graph
    }

    pub fn hop_model(&self) -> &HopModel {
        &self.sim.model
    }

    /// Current raw telemetry.
    pub fn snapshot(&self) -> ServiceGraph {
        self.sim.snapshot(self.time_ms)
    }

    /// Queue length per node, as `f64`.
    pub fn queue_lengths(&self) -> Vec<f64> {
        self.sim.replicas.iter().map(|r| r.queue_length() as f64).collect()
    }

    pub fn edge_to(&self, candidate: usize) -> usize {
        self.sim.graph.find_edge(self.source, self.candidates[candidate]).expect("candidate edge")
    }
}

/// One decision as it happened during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub request: u64,
    pub hop_index: usize,
    pub source: NodeId,
    pub candidates: Vec<NodeId>,
    pub chosen: usize,
    pub oracle_best: usize,
    pub prediction: Option<HopPrediction>,
    /// Chosen edge's latency EWMA at decision time.
    pub ewma_latency_ms: f64,
    /// Chosen edge's sliding-window hop jitter at decision time.
    pub window_jitter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOutput {
    pub trace: Trace,
    pub samples: Vec<DecisionSample>,
    pub decisions: Vec<DecisionRecord>,
    /// Telemetry at the horizon.
    pub final_snapshot: Option<ServiceGraph>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    request: usize,
    arrived_ms: f64,
    /// Source node and link latency when the job came over a routed hop.
    via: Option<(NodeId, f64)>,
}

#[derive(Debug)]
struct Replica {
    waiting: VecDeque<Job>,
    in_service: Option<(Job, f64, f64)>,
    /// Recent `(start, end)` service intervals.
    busy: VecDeque<(f64, f64)>,
    response_ewma: f64,
    initial_cpu: f64,
}

impl Replica {
    fn queue_length(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }

    fn cpu(&self, now: f64) -> f64 {
        let span = now.min(TELEMETRY_WINDOW_MS);
        if span <= 0.0 {
            return self.initial_cpu;
        }
        let from = now - span;
        let busy: f64 = self.busy.iter().map(|&(s, e)| (e.min(now) - s.max(from)).max(0.0)).sum();
        (busy / span).clamp(0.0, 1.0)
    }
}

#[derive(Debug)]
struct Link {
    latency_ewma: f64,
    initial_stability: f64,
    link_window: VecDeque<f64>,
    hop_window: VecDeque<f64>,
    calls: VecDeque<f64>,
}

impl Link {
    fn stability(&self) -> f64 {
        if self.link_window.len() < 2 {
            return self.initial_stability;
        }
        let mean = self.link_window.iter().sum::<f64>() / self.link_window.len() as f64;
        let std = population_std(self.link_window.iter().copied());
        if mean > 0.0 {
            1.0 - (std / mean).min(1.0)
        } else {
            1.0
        }
    }

    fn call_frequency(&self, now: f64) -> f64 {
        self.calls.iter().filter(|&&t| t > now - TELEMETRY_WINDOW_MS && t <= now).count() as f64 * 1000.0
            / TELEMETRY_WINDOW_MS
    }
}

fn push_window(w: &mut VecDeque<f64>, v: f64) {
    if w.len() == JITTER_WINDOW {
        w.pop_front();
    }
    w.push_back(v);
}

struct RequestState {
    rng: ChaCha8Rng,
    service: ServiceId,
    hops_started: usize,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival,
    JobArrive { node: NodeId, job: Job },
    ServiceDone { node: NodeId },
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct SimState<'a> {
    graph: &'a ServiceGraph,
    model: HopModel,
    alpha: f64,
    replicas: Vec<Replica>,
    links: Vec<Link>,
}

impl SimState<'_> {
    fn snapshot(&self, now: f64) -> ServiceGraph {
        let nodes = self
            .replicas
            .iter()
            .map(|r| NodeFeatures::new(r.cpu(now), r.response_ewma, r.queue_length() as f64))
            .collect();
        let edges = self
            .links
            .iter()
            .map(|l| EdgeFeatures::new(l.latency_ewma, l.stability(), l.call_frequency(now)))
            .collect();
        self.graph.with_features(nodes, edges)
    }
}

/// Snapshot of a graph's telemetry before any traffic.
pub fn snapshot_features_initial(g: &ServiceGraph) -> ServiceGraph {
    let nodes = g.nodes().iter().map(|n| NodeFeatures { queue_length: 0.0, ..*n }).collect();
    let edges = g.edges().iter().map(|e| EdgeFeatures { call_frequency: 0.0, ..e.features }).collect();
    g.with_features(nodes, edges)
}

/// Runs one simulation. Deterministic in `(g, w, policy)`.
pub fn run_simulation(
    g: &ServiceGraph,
    w: &WorkloadSpec,
    policy: &mut dyn RoutingPolicy,
    collect_samples: bool,
) -> Result<SimOutput, SimError> {
    w.validate()?;
    crate::graph::validate_graph(g)
        .map_err(|v| SimError::InvalidGraph(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?;
    if g.n_nodes() == 0 {
        return Err(SimError::InvalidGraph("graph has no nodes".into()));
    }

    let successors = g.logical_successors();
    let replicas_of = g.replicas_by_service();
    let n_services = successors.len();
    let calls: Vec<_> =
        successors.iter().enumerate().flat_map(|(a, s)| s.iter().map(move |&b| (a, b))).collect();
    if topological_order(n_services, &calls).is_none() {
        return Err(SimError::CyclicCallGraph);
    }
    let mut has_caller = vec![false; n_services];
    for &(_, b) in &calls {
        has_caller[b] = true;
    }
    let entries: Vec<ServiceId> =
        (0..n_services).filter(|&s| !has_caller[s] && !replicas_of[s].is_empty()).collect();

    let mut state = SimState {
        graph: g,
        model: HopModel::from_graph(g),
        alpha: w.ewma_alpha,
        replicas: g
            .nodes()
            .iter()
            .map(|n| Replica {
                waiting: VecDeque::new(),
                in_service: None,
                busy: VecDeque::new(),
                response_ewma: n.response_time_ewma,
                initial_cpu: n.cpu_utilization,
            })
            .collect(),
        links: g
            .edges()
            .iter()
            .map(|e| Link {
                latency_ewma: e.features.latency_ewma,
                initial_stability: e.features.stability,
                link_window: VecDeque::new(),
                hop_window: VecDeque::new(),
                calls: VecDeque::new(),
            })
            .collect(),
    };

    let horizon_ms = w.horizon * 1000.0;
    let mut arrivals = ChaCha8Rng::seed_from_u64(splitmix64(w.seed ^ 0xa55a_a55a));
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        heap.push(Event { time, seq, kind });
        seq += 1;
    };

    let mut out = SimOutput::default();
    let mut requests: Vec<RequestState> = Vec::new();

    if let Some(t) = next_arrival(w, 0.0, horizon_ms, &mut arrivals) {
        push(&mut heap, t, EventKind::Arrival);
    }

    while let Some(ev) = heap.pop() {
        if ev.time > horizon_ms {
            break;
        }
        let now = ev.time;
        match ev.kind {
            EventKind::Arrival => {
                let id = requests.len();
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(w.seed ^ splitmix64(id as u64)));
                let service = entries[rng.random_range(0..entries.len())];
                let reps = &replicas_of[service];
                let node = reps[rng.random_range(0..reps.len())];
                requests.push(RequestState { rng, service, hops_started: 0 });
                out.trace.records.push(RequestRecord {
                    request_id: id as u64,
                    t_enter_ms: now,
                    entry_node: node,
                    hops: Vec::new(),
                    completed: false,
                });
                let job = Job { request: id, arrived_ms: now, via: None };
                push(&mut heap, now, EventKind::JobArrive { node, job });
                if let Some(t) = next_arrival(w, now, horizon_ms, &mut arrivals) {
                    push(&mut heap, t, EventKind::Arrival);
                }
            }
            EventKind::JobArrive { node, job } => {
                let replica = &mut state.replicas[node];
                replica.waiting.push_back(job);
                if replica.in_service.is_none() {
                    if let Some(done) = start_service(&mut state, &mut requests, node, now) {
                        push(&mut heap, done, EventKind::ServiceDone { node });
                    }
                }
            }
            EventKind::ServiceDone { node } => {
                let (job, start, end) = state.replicas[node].in_service.take().expect("busy server");
                let queue_ms = start - job.arrived_ms;
                let service_ms = end - start;
                let alpha = state.alpha;
                let r = &mut state.replicas[node];
                r.response_ewma += alpha * (queue_ms + service_ms - r.response_ewma);
                if let Some((src, link_ms)) = job.via {
                    let latency_ms = link_ms + queue_ms + service_ms;
                    let e = g.find_edge(src, node).expect("routed hop edge");
                    let link = &mut state.links[e];
                    link.latency_ewma += alpha * (latency_ms - link.latency_ewma);
                    push_window(&mut link.hop_window, latency_ms);
                    push_window(&mut link.link_window, link_ms);
                    out.trace.records[job.request].hops.push(Hop { src, dst: node, queue_ms, latency_ms });
                }

                route_onward(
                    &mut state,
                    &mut requests,
                    &successors,
                    &replicas_of,
                    policy,
                    collect_samples,
                    &mut out,
                    job.request,
                    node,
                    now,
                )
                .map(|next| {
                    if let Some((dst, at, job)) = next {
                        push(&mut heap, at, EventKind::JobArrive { node: dst, job });
                    }
                })?;

                if let Some(done) = start_service(&mut state, &mut requests, node, now) {
                    push(&mut heap, done, EventKind::ServiceDone { node });
                }
            }
        }
    }

    let horizon_now = horizon_ms;
    out.final_snapshot = Some(state.snapshot(horizon_now));
    out.trace.completed_count = out.trace.records.iter().filter(|r| r.completed).count();
    out.trace.inflight_at_horizon = out.trace.records.len() - out.trace.completed_count;
    Ok(out)
}

fn next_arrival(w: &WorkloadSpec, mut t: f64, horizon_ms: f64, rng: &mut ChaCha8Rng) -> Option<f64> {
    // Piecewise-constant rate: redraw from each change point (memoryless).
    loop {
        let draw: f64 = Exp1.sample(rng);
        let candidate = t + draw / w.rate_per_ms(t);
        let change = w.next_rate_change_ms(t);
        if candidate < change {
            return (candidate < horizon_ms).then_some(candidate);
        }
        if change >= horizon_ms {
            return None;
        }
        t = change;
    }
}

fn start_service(state: &mut SimState<'_>, requests: &mut [RequestState], node: NodeId, now: f64) -> Option<f64> {
    let mean = state.model.mean_service_ms[node];
    let replica = &mut state.replicas[node];
    let job = replica.waiting.pop_front()?;
    let draw: f64 = Exp1.sample(&mut requests[job.request].rng);
    let end = now + mean * draw;
    replica.in_service = Some((job, now, end));
    while replica.busy.front().is_some_and(|&(_, e)| e < now - TELEMETRY_WINDOW_MS) {
        replica.busy.pop_front();
    }
    replica.busy.push_back((now, end));
    Some(end)
}

#[allow(clippy::too_many_arguments)]
fn route_onward(
    state: &mut SimState<'_>,
    requests: &mut [RequestState],
    successors: &[Vec<ServiceId>],
    replicas_of: &[Vec<NodeId>],
    policy: &mut dyn RoutingPolicy,
    collect_samples: bool,
    out: &mut SimOutput,
    request: usize,
    node: NodeId,
    now: f64,
) -> Result<Option<(NodeId, f64, Job)>, SimError> {
    let req = &mut requests[request];
    let next = &successors[req.service];
    if next.is_empty() {
        out.trace.records[request].completed = true;
        return Ok(None);
    }
    let service = next[req.rng.random_range(0..next.len())];
    let z: f64 = StandardNormal.sample(&mut req.rng);
    req.service = service;
    let hop_index = req.hops_started;
    req.hops_started += 1;

    let candidates = &replicas_of[service];
    let queue_lengths: Vec<f64> = state.replicas.iter().map(|r| r.queue_length() as f64).collect();
    let hops = counterfactual_hops(&state.model, state.graph, &queue_lengths, node, candidates)?;
    let oracle_best = argmin_first(&hops.iter().map(|h| h.0).collect::<Vec<_>>()).ok_or(SimError::NoCandidates)?;

    let view = DecisionView { time_ms: now, request: request as u64, source: node, service, candidates, sim: state };
    let choice = policy.choose(&view);
    if choice.index >= candidates.len() {
        return Err(SimError::PolicyOutOfRange {
            policy: policy.name().to_string(),
            request: request as u64,
            node,
            chosen: choice.index,
            n_candidates: candidates.len(),
        });
    }
    if collect_samples {
        out.samples.push(DecisionSample {
            snapshot: state.snapshot(now),
            source: node,
            candidates: candidates.clone(),
            oracle_best,
            realized_latency_ms: hops.iter().map(|h| h.0).collect(),
            realized_jitter_ms: hops.iter().map(|h| h.1).collect(),
            time_ms: now,
        });
    }

    let dst = candidates[choice.index];
    let e = state.graph.find_edge(node, dst).expect("candidate edge");
    let link = &mut state.links[e];
    out.decisions.push(DecisionRecord {
        request: request as u64,
        hop_index,
        source: node,
        candidates: candidates.clone(),
        chosen: choice.index,
        oracle_best,
        prediction: choice.prediction,
        ewma_latency_ms: link.latency_ewma,
        window_jitter_ms: population_std(link.hop_window.iter().copied()),
    });
    while link.calls.front().is_some_and(|&t| t <= now - TELEMETRY_WINDOW_MS) {
        link.calls.pop_front();
    }
    link.calls.push_back(now);

    let sigma = state.model.link_sigma[e];
    let link_ms = state.model.link_mean_ms[e] * (sigma * z - 0.5 * sigma * sigma).exp();
    let job = Job { request, arrived_ms: now + link_ms, via: Some((node, link_ms)) };
    Ok(Some((dst, now + link_ms, job)))
}

/// Runs `f` on a view over the warm-start state (no traffic yet). Mainly for tests and tools.
pub fn with_initial_view<R>(
    g: &ServiceGraph,
    source: NodeId,
    candidates: &[NodeId],
    f: impl FnOnce(&DecisionView<'_>) -> R,
) -> R {
    let state = SimState {
        graph: g,
        model: HopModel::from_graph(g),
        alpha: DEFAULT_EWMA_ALPHA,
        replicas: g
            .nodes()
            .iter()
            .map(|n| Replica {
                waiting: VecDeque::new(),
                in_service: None,
                busy: VecDeque::new(),
                response_ewma: n.response_time_ewma,
                initial_cpu: n.cpu_utilization,
            })
            .collect(),
        links: g
            .edges()
            .iter()
            .map(|e| Link {
                latency_ewma: e.features.latency_ewma,
                initial_stability: e.features.stability,
                link_window: VecDeque::new(),
                hop_window: VecDeque::new(),
                calls: VecDeque::new(),
            })
            .collect(),
    };
    let service = candidates.first().map_or(0, |&c| g.service(c));
    let view = DecisionView { time_ms: 0.0, request: 0, source, service, candidates, sim: &state };
    f(&view)
}

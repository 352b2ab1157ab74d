//! Seeded synthetic topologies with a controllable mean logical out-degree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeFeatures, EdgeRecord, NodeFeatures, ServiceGraph, ServiceId};

/// Target layer count for layered call graphs.
const LAYERS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("n_services must be >= 1")]
    NoServices,
    #[error("replicas_per_service must be >= 1")]
    NoReplicas,
    #[error("avg_out_degree must be finite and > 0, got {0}")]
    NonPositiveDegree(f64),
    #[error("avg_out_degree {degree} exceeds n_services - 1 = {max}")]
    DegreeTooHigh { degree: f64, max: usize },
    #[error("avg_out_degree {degree} is not reachable by a layered graph with {n} services (max {max_edges} edges)")]
    Unreachable { degree: f64, n: usize, max_edges: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub n_services: usize,
    pub replicas_per_service: usize,
    pub avg_out_degree: f64,
    pub seed: u64,
    pub layered: bool,
}

impl TopologySpec {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.n_services == 0 {
            return Err(TopologyError::NoServices);
        }
        if self.replicas_per_service == 0 {
            return Err(TopologyError::NoReplicas);
        }
        if !(self.avg_out_degree.is_finite() && self.avg_out_degree > 0.0) {
            return Err(TopologyError::NonPositiveDegree(self.avg_out_degree));
        }
        // A lone service has no possible edge; the degree knob is moot there.
        if self.n_services > 1 && self.avg_out_degree > (self.n_services - 1) as f64 {
            return Err(TopologyError::DegreeTooHigh {
                degree: self.avg_out_degree,
                max: self.n_services - 1,
            });
        }
        Ok(())
    }
}

/// Hand-authored logical call graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalTopology {
    pub names: Vec<String>,
    /// Directed service-level calls `(caller, callee)`.
    pub calls: Vec<(ServiceId, ServiceId)>,
}

impl LogicalTopology {
    pub fn n_services(&self) -> usize {
        self.names.len()
    }

    /// Kahn's algorithm; `None` on a cycle. Ties resolve to the lowest id.
    pub fn topological_order(&self) -> Option<Vec<ServiceId>> {
        topological_order(self.n_services(), &self.calls)
    }

    /// Replica expansion with seeded warm-start features.
    pub fn expand(&self, replicas: usize, seed: u64) -> ServiceGraph {
        expand_replicas(self.n_services(), &self.calls, replicas, seed)
    }
}

pub fn topological_order(n: usize, calls: &[(ServiceId, ServiceId)]) -> Option<Vec<ServiceId>> {
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in calls {
        indeg[b] += 1;
        succ[a].push(b);
    }
    let mut ready: std::collections::BTreeSet<_> = (0..n).filter(|&s| indeg[s] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(s) = ready.pop_first() {
        order.push(s);
        for &t in &succ[s] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.insert(t);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// The twelve-service social network preset with its default spec (3 replicas each).
pub fn social_network_preset() -> (TopologySpec, LogicalTopology) {
    const NAMES: [&str; 12] = [
        "gateway", "auth", "user", "post", "timeline", "recommend", "comment", "like", "media",
        "notify", "search", "storage",
    ];
    let id = |name: &str| NAMES.iter().position(|n| *n == name).expect("preset name");
    let calls = [
        ("gateway", "auth"),
        ("gateway", "timeline"),
        ("gateway", "post"),
        ("gateway", "search"),
        ("auth", "user"),
        ("user", "storage"),
        ("timeline", "recommend"),
        ("timeline", "storage"),
        ("recommend", "like"),
        ("recommend", "user"),
        ("post", "comment"),
        ("post", "media"),
        ("post", "notify"),
        ("comment", "storage"),
        ("like", "storage"),
        ("like", "notify"),
        ("media", "storage"),
        ("notify", "user"),
        ("search", "user"),
        ("search", "post"),
    ]
    .iter()
    .map(|(a, b)| (id(a), id(b)))
    .collect::<Vec<_>>();
    let topo = LogicalTopology { names: NAMES.iter().map(|s| s.to_string()).collect(), calls };
    let spec = TopologySpec {
        n_services: NAMES.len(),
        replicas_per_service: 3,
        avg_out_degree: topo.calls.len() as f64 / NAMES.len() as f64,
        seed: 0,
        layered: true,
    };
    (spec, topo)
}

/// Samples a logical call graph and expands it to replicas.
///
/// Layered graphs place services in up to four layers and only draw forward
/// edges. Every non-final-layer service gets an outgoing call and every
/// non-first-layer service an incoming one; the remaining edges are drawn
/// uniformly without replacement until the edge count equals
/// `round(avg_out_degree * n_services)`.
pub fn generate_topology(spec: &TopologySpec) -> Result<ServiceGraph, TopologyError> {
    spec.validate()?;
    let calls = sample_logical_calls(spec)?;
    Ok(expand_replicas(spec.n_services, &calls, spec.replicas_per_service, spec.seed))
}

/// The logical edge list [`generate_topology`] expands.
pub fn sample_logical_calls(spec: &TopologySpec) -> Result<Vec<(ServiceId, ServiceId)>, TopologyError> {
    spec.validate()?;
    let n = spec.n_services;
    if n == 1 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = (spec.avg_out_degree * n as f64).round() as usize;

    let mut present = vec![false; n * n];
    let mut calls = Vec::with_capacity(target);
    let add = |a: usize, b: usize, present: &mut Vec<bool>, calls: &mut Vec<(usize, usize)>| {
        if !present[a * n + b] {
            present[a * n + b] = true;
            calls.push((a, b));
        }
    };

    let candidates: Vec<(usize, usize)> = if spec.layered {
        let layer = assign_layers(n, &mut rng);
        let n_layers = layer.iter().max().unwrap() + 1;
        let pairs: Vec<_> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| layer[a] < layer[b])
            .collect();
        if target > pairs.len() {
            return Err(TopologyError::Unreachable { degree: spec.avg_out_degree, n, max_edges: pairs.len() });
        }
        for a in 0..n {
            if layer[a] + 1 < n_layers {
                let later: Vec<_> = (0..n).filter(|&b| layer[b] > layer[a]).collect();
                add(a, later[rng.random_range(0..later.len())], &mut present, &mut calls);
            }
        }
        for b in 0..n {
            if layer[b] > 0 && !calls.iter().any(|&(_, t)| t == b) {
                let earlier: Vec<_> = (0..n).filter(|&a| layer[a] < layer[b]).collect();
                add(earlier[rng.random_range(0..earlier.len())], b, &mut present, &mut calls);
            }
        }
        pairs
    } else {
        (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|&(a, b)| a != b).collect()
    };

    let mut free: Vec<_> = candidates.into_iter().filter(|&(a, b)| !present[a * n + b]).collect();
    free.shuffle(&mut rng);
    let missing = target.saturating_sub(calls.len());
    for &(a, b) in free.iter().take(missing) {
        add(a, b, &mut present, &mut calls);
    }
    calls.sort_unstable();
    Ok(calls)
}

fn assign_layers(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n_layers = LAYERS.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut layer = vec![0; n];
    for (k, &s) in order.iter().enumerate() {
        layer[s] = if k < n_layers { k } else { rng.random_range(0..n_layers) };
    }
    layer
}

/// Full bipartite replica expansion. Replicas of service `s` are nodes
/// `s * replicas .. (s + 1) * replicas`.
///
/// Warm-start features: cpu ~ U[0.1, 0.6] per replica; response time
/// ~ U[1, 4] ms per service, shared by its replicas; queue 0; link latency
/// ~ lognormal(median 5 ms, sigma 0.5), stability ~ U[0.7, 1.0], call frequency 0.
pub fn expand_replicas(
    n_services: usize,
    calls: &[(ServiceId, ServiceId)],
    replicas: usize,
    seed: u64,
) -> ServiceGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_feed_0f_f00d);
    let n = n_services * replicas;
    let base_ms: Vec<f64> = (0..n_services).map(|_| rng.random_range(1.0..=4.0)).collect();
    let nodes: Vec<_> = (0..n)
        .map(|i| NodeFeatures::new(rng.random_range(0.1..=0.6), base_ms[i / replicas], 0.0))
        .collect();
    let service_of = (0..n).map(|i| i / replicas).collect();
    let latency = LogNormal::new(5f64.ln(), 0.5).expect("lognormal parameters");
    let mut sorted = calls.to_vec();
    sorted.sort_unstable();
    let mut edges = Vec::with_capacity(calls.len() * replicas * replicas);
    for (a, b) in sorted {
        for ra in 0..replicas {
            for rb in 0..replicas {
                let features =
                    EdgeFeatures::new(latency.sample(&mut rng), rng.random_range(0.7..=1.0), 0.0);
                edges.push(EdgeRecord { src: a * replicas + ra, dst: b * replicas + rb, features });
            }
        }
    }
    ServiceGraph::from_parts_unchecked(nodes, edges, service_of)
}

//! Service graph: replica nodes, directed call edges, and their telemetry features.
//!
//! Node ids are dense `0..n`. Logical services live in a separate id space
//! (`service_of`), so several replica nodes may share one service id.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the node feature vector: cpu utilization, response time EWMA, queue length.
pub const NODE_DIM: usize = 3;
/// Width of the edge feature vector: latency EWMA, stability, call frequency.
pub const EDGE_DIM: usize = 3;

pub type NodeId = usize;
pub type ServiceId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("graph io: {0}")]
    Io(#[from] std::io::Error),
    #[error("graph json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-replica telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeFeatures {
    /// Busy fraction in `[0, 1]`.
    pub cpu_utilization: f64,
    /// Milliseconds.
    pub response_time_ewma: f64,
    pub queue_length: f64,
}

impl NodeFeatures {
    pub fn new(cpu_utilization: f64, response_time_ewma: f64, queue_length: f64) -> Self {
        Self { cpu_utilization, response_time_ewma, queue_length }
    }

    pub fn to_array(self) -> [f64; NODE_DIM] {
        [self.cpu_utilization, self.response_time_ewma, self.queue_length]
    }

    pub fn from_array(a: [f64; NODE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Per-edge telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeFeatures {
    /// Milliseconds.
    pub latency_ewma: f64,
    /// `1.0` is perfectly stable.
    pub stability: f64,
    /// Calls per second.
    pub call_frequency: f64,
}

impl EdgeFeatures {
    pub fn new(latency_ewma: f64, stability: f64, call_frequency: f64) -> Self {
        Self { latency_ewma, stability, call_frequency }
    }

    pub fn to_array(self) -> [f64; EDGE_DIM] {
        [self.latency_ewma, self.stability, self.call_frequency]
    }

    pub fn from_array(a: [f64; EDGE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub features: EdgeFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DanglingEdge { edge: usize, src: NodeId, dst: NodeId },
    DuplicateEdge { edge: usize, src: NodeId, dst: NodeId },
    SelfLoop { edge: usize, node: NodeId },
    NodeFeatureOutOfRange { node: NodeId, feature: &'static str, value: f64 },
    EdgeFeatureOutOfRange { edge: usize, feature: &'static str, value: f64 },
    ServiceMapLength { nodes: usize, service_of: usize },
    AdjacencyMismatch { node: NodeId },
}

impl Violation {
    /// Short machine-friendly label.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::DanglingEdge { .. } => "dangling edge",
            Violation::DuplicateEdge { .. } => "duplicate edge",
            Violation::SelfLoop { .. } => "self-loop",
            Violation::NodeFeatureOutOfRange { .. } | Violation::EdgeFeatureOutOfRange { .. } => {
                "feature out of range"
            }
            Violation::ServiceMapLength { .. } => "service map length",
            Violation::AdjacencyMismatch { .. } => "adjacency mismatch",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingEdge { edge, src, dst } => {
                write!(f, "dangling edge #{edge} ({src}->{dst})")
            }
            Violation::DuplicateEdge { edge, src, dst } => {
                write!(f, "duplicate edge #{edge} ({src}->{dst})")
            }
            Violation::SelfLoop { edge, node } => write!(f, "self-loop #{edge} on node {node}"),
            Violation::NodeFeatureOutOfRange { node, feature, value } => {
                write!(f, "feature out of range: node {node} {feature}={value}")
            }
            Violation::EdgeFeatureOutOfRange { edge, feature, value } => {
                write!(f, "feature out of range: edge #{edge} {feature}={value}")
            }
            Violation::ServiceMapLength { nodes, service_of } => {
                write!(f, "service map has {service_of} entries for {nodes} nodes")
            }
            Violation::AdjacencyMismatch { node } => write!(f, "adjacency mismatch at node {node}"),
        }
    }
}

/// Directed graph of service replicas.
///
/// Immutable once built; new telemetry means a new snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphFile", try_from = "GraphFile")]
pub struct ServiceGraph {
    nodes: Vec<NodeFeatures>,
    edges: Vec<EdgeRecord>,
    service_of: Vec<ServiceId>,
    /// Outgoing edge indices per node, ascending by destination id.
    adjacency: Vec<Vec<usize>>,
}

impl ServiceGraph {
    /// Builds a graph and rejects it if [`validate_graph`] finds anything.
    pub fn new(
        nodes: Vec<NodeFeatures>,
        edges: Vec<EdgeRecord>,
        service_of: Vec<ServiceId>,
    ) -> Result<Self, GraphError> {
        let g = Self::from_parts_unchecked(nodes, edges, service_of);
        validate_graph(&g).map_err(GraphError::Invalid)?;
        Ok(g)
    }

    /// Builds without validation. Dangling edges are left out of the adjacency.
    pub fn from_parts_unchecked(
        nodes: Vec<NodeFeatures>,
        edges: Vec<EdgeRecord>,
        service_of: Vec<ServiceId>,
    ) -> Self {
        let adjacency = build_adjacency(nodes.len(), &edges);
        Self { nodes, edges, service_of, adjacency }
    }

    pub fn empty() -> Self {
        Self::from_parts_unchecked(Vec::new(), Vec::new(), Vec::new())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeFeatures] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn node(&self, i: NodeId) -> &NodeFeatures {
        &self.nodes[i]
    }

    pub fn edge(&self, e: usize) -> &EdgeRecord {
        &self.edges[e]
    }

    pub fn service_of(&self) -> &[ServiceId] {
        &self.service_of
    }

    pub fn service(&self, i: NodeId) -> ServiceId {
        self.service_of[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Outgoing edge indices of `i`, ascending by destination. Panics on a bad id.
    pub fn out_edges(&self, i: NodeId) -> &[usize] {
        &self.adjacency[i]
    }

    /// Index of the edge `src -> dst`, if present.
    pub fn find_edge(&self, src: NodeId, dst: NodeId) -> Option<usize> {
        let adj = self.adjacency.get(src)?;
        adj.binary_search_by_key(&dst, |&e| self.edges[e].dst).ok().map(|k| adj[k])
    }

    /// `N(i)`: directed out-neighbors as `(neighbor, edge index)`, ascending by neighbor id.
    pub fn out_neighbors(&self, i: NodeId) -> Result<Vec<(NodeId, usize)>, GraphError> {
        let adj = self.adjacency.get(i).ok_or(GraphError::UnknownNode(i))?;
        Ok(adj.iter().map(|&e| (self.edges[e].dst, e)).collect())
    }

    /// Number of distinct logical services (max id + 1).
    pub fn n_services(&self) -> usize {
        self.service_of.iter().max().map_or(0, |&m| m + 1)
    }

    /// Replica node ids of each logical service, ascending.
    pub fn replicas_by_service(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.n_services()];
        for (node, &s) in self.service_of.iter().enumerate() {
            out[s].push(node);
        }
        out
    }

    /// Logical call graph: sorted, deduplicated successor services per service.
    pub fn logical_successors(&self) -> Vec<Vec<ServiceId>> {
        let mut out = vec![Vec::new(); self.n_services()];
        for e in &self.edges {
            let (a, b) = (self.service_of[e.src], self.service_of[e.dst]);
            out[a].push(b);
        }
        for s in &mut out {
            s.sort_unstable();
            s.dedup();
        }
        out
    }

    /// Same structure with replaced features. Lengths must match.
    pub fn with_features(&self, nodes: Vec<NodeFeatures>, edge_features: Vec<EdgeFeatures>) -> Self {
        assert_eq!(nodes.len(), self.nodes.len(), "node feature count");
        assert_eq!(edge_features.len(), self.edges.len(), "edge feature count");
        let edges = self
            .edges
            .iter()
            .zip(edge_features)
            .map(|(e, features)| EdgeRecord { src: e.src, dst: e.dst, features })
            .collect();
        Self { nodes, edges, service_of: self.service_of.clone(), adjacency: self.adjacency.clone() }
    }

    /// Relabels node `i` as `perm[i]`. Edge order is preserved.
    pub fn permuted(&self, perm: &[NodeId]) -> Self {
        assert_eq!(perm.len(), self.n_nodes());
        let mut nodes = vec![NodeFeatures::default(); self.n_nodes()];
        let mut service_of = vec![0; self.n_nodes()];
        for i in 0..self.n_nodes() {
            nodes[perm[i]] = self.nodes[i];
            service_of[perm[i]] = self.service_of[i];
        }
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeRecord { src: perm[e.src], dst: perm[e.dst], features: e.features })
            .collect();
        Self::from_parts_unchecked(nodes, edges, service_of)
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates.
    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(s)?;
        file.into_graph()
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn build_adjacency(n: usize, edges: &[EdgeRecord]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        if e.src < n && e.dst < n {
            adj[e.src].push(k);
        }
    }
    for list in &mut adj {
        list.sort_by_key(|&k| (edges[k].dst, k));
    }
    adj
}

/// Structural and range checks. Violations are data, not failures.
pub fn validate_graph(g: &ServiceGraph) -> Result<(), Vec<Violation>> {
    let n = g.n_nodes();
    let mut out = Vec::new();

    if g.service_of.len() != n {
        out.push(Violation::ServiceMapLength { nodes: n, service_of: g.service_of.len() });
    }

    let mut seen = HashSet::new();
    for (k, e) in g.edges.iter().enumerate() {
        if e.src >= n || e.dst >= n {
            out.push(Violation::DanglingEdge { edge: k, src: e.src, dst: e.dst });
            continue;
        }
        if e.src == e.dst {
            out.push(Violation::SelfLoop { edge: k, node: e.src });
        }
        if !seen.insert((e.src, e.dst)) {
            out.push(Violation::DuplicateEdge { edge: k, src: e.src, dst: e.dst });
        }
        let f = e.features;
        let bad = |feature, value: f64, ok: bool| {
            (!ok).then_some(Violation::EdgeFeatureOutOfRange { edge: k, feature, value })
        };
        out.extend(bad("latency_ewma", f.latency_ewma, f.latency_ewma >= 0.0));
        out.extend(bad("stability", f.stability, (0.0..=1.0).contains(&f.stability)));
        out.extend(bad("call_frequency", f.call_frequency, f.call_frequency >= 0.0));
    }

    for (i, f) in g.nodes.iter().enumerate() {
        let bad = |feature, value: f64, ok: bool| {
            (!ok).then_some(Violation::NodeFeatureOutOfRange { node: i, feature, value })
        };
        out.extend(bad("cpu_utilization", f.cpu_utilization, (0.0..=1.0).contains(&f.cpu_utilization)));
        out.extend(bad("response_time_ewma", f.response_time_ewma, f.response_time_ewma >= 0.0));
        out.extend(bad("queue_length", f.queue_length, f.queue_length >= 0.0));
    }

    let rebuilt = build_adjacency(n, &g.edges);
    if rebuilt.len() != g.adjacency.len() {
        out.push(Violation::AdjacencyMismatch { node: rebuilt.len().min(g.adjacency.len()) });
    } else {
        for (i, (a, b)) in rebuilt.iter().zip(&g.adjacency).enumerate() {
            if a != b {
                out.push(Violation::AdjacencyMismatch { node: i });
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Per-dimension normalization statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
}

impl FeatureStats {
    /// Zero mean, unit deviation.
    pub fn identity() -> Self {
        Self {
            node_mean: vec![0.0; NODE_DIM],
            node_std: vec![1.0; NODE_DIM],
            edge_mean: vec![0.0; EDGE_DIM],
            edge_std: vec![1.0; EDGE_DIM],
        }
    }

    fn check_dims(&self) -> Result<(), GraphError> {
        for (v, expected) in [
            (&self.node_mean, NODE_DIM),
            (&self.node_std, NODE_DIM),
            (&self.edge_mean, EDGE_DIM),
            (&self.edge_std, EDGE_DIM),
        ] {
            if v.len() != expected {
                return Err(GraphError::DimensionMismatch { expected, got: v.len() });
            }
        }
        Ok(())
    }
}

/// Mean and population std per dimension over every node (and edge) of every snapshot.
pub fn feature_stats<'a, I>(graphs: I) -> Result<FeatureStats, GraphError>
where
    I: IntoIterator<Item = &'a ServiceGraph>,
    I::IntoIter: Clone,
{
    let graphs = graphs.into_iter();
    let node_rows = || graphs.clone().flat_map(|g| g.nodes.iter().map(|n| n.to_array()));
    let edge_rows = || graphs.clone().flat_map(|g| g.edges.iter().map(|e| e.features.to_array()));

    let (node_mean, node_std) = moments(node_rows).ok_or(GraphError::EmptyDataset)?;
    let (edge_mean, edge_std) = moments(edge_rows).unwrap_or(([0.0; EDGE_DIM], [0.0; EDGE_DIM]));
    Ok(FeatureStats {
        node_mean: node_mean.to_vec(),
        node_std: node_std.to_vec(),
        edge_mean: edge_mean.to_vec(),
        edge_std: edge_std.to_vec(),
    })
}

// Welford accumulation; `None` when there are no rows.
fn moments<const D: usize, F, I>(rows: F) -> Option<([f64; D], [f64; D])>
where
    F: Fn() -> I,
    I: Iterator<Item = [f64; D]>,
{
    let mut count = 0.0;
    let mut mean = [0.0; D];
    let mut m2 = [0.0; D];
    for row in rows() {
        count += 1.0;
        for k in 0..D {
            let delta = row[k] - mean[k];
            mean[k] += delta / count;
            m2[k] += delta * (row[k] - mean[k]);
        }
    }
    if count == 0.0 {
        return None;
    }
    let std = m2.map(|v| (v / count).max(0.0).sqrt());
    Some((mean, std))
}

fn zscore(x: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (x - mean) / std
    } else {
        0.0
    }
}

/// Z-scores every feature dimension; zero-variance dimensions map to 0.
pub fn normalize_features(g: &ServiceGraph, s: &FeatureStats) -> Result<ServiceGraph, GraphError> {
    s.check_dims()?;
    let nodes = g
        .nodes
        .iter()
        .map(|n| {
            let a = n.to_array();
            NodeFeatures::from_array(std::array::from_fn(|k| zscore(a[k], s.node_mean[k], s.node_std[k])))
        })
        .collect();
    let edges = g
        .edges
        .iter()
        .map(|e| {
            let a = e.features.to_array();
            EdgeFeatures::from_array(std::array::from_fn(|k| zscore(a[k], s.edge_mean[k], s.edge_std[k])))
        })
        .collect();
    Ok(g.with_features(nodes, edges))
}

/// Inverse of [`normalize_features`] on dimensions with nonzero std.
pub fn denormalize_features(g: &ServiceGraph, s: &FeatureStats) -> Result<ServiceGraph, GraphError> {
    s.check_dims()?;
    let undo = |z: f64, mean: f64, std: f64| if std > 0.0 { z * std + mean } else { mean };
    let nodes = g
        .nodes
        .iter()
        .map(|n| {
            let a = n.to_array();
            NodeFeatures::from_array(std::array::from_fn(|k| undo(a[k], s.node_mean[k], s.node_std[k])))
        })
        .collect();
    let edges = g
        .edges
        .iter()
        .map(|e| {
            let a = e.features.to_array();
            EdgeFeatures::from_array(std::array::from_fn(|k| undo(a[k], s.edge_mean[k], s.edge_std[k])))
        })
        .collect();
    Ok(g.with_features(nodes, edges))
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<[f64; NODE_DIM]>,
    edges: Vec<EdgeFile>,
    service_of: Vec<ServiceId>,
}

#[derive(Serialize, Deserialize)]
struct EdgeFile {
    src: NodeId,
    dst: NodeId,
    features: [f64; EDGE_DIM],
}

impl From<ServiceGraph> for GraphFile {
    fn from(g: ServiceGraph) -> Self {
        GraphFile::from(&g)
    }
}

impl TryFrom<GraphFile> for ServiceGraph {
    type Error = GraphError;

    fn try_from(file: GraphFile) -> Result<Self, GraphError> {
        file.into_graph()
    }
}

impl From<&ServiceGraph> for GraphFile {
    fn from(g: &ServiceGraph) -> Self {
        Self {
            nodes: g.nodes.iter().map(|n| n.to_array()).collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeFile { src: e.src, dst: e.dst, features: e.features.to_array() })
                .collect(),
            service_of: g.service_of.clone(),
        }
    }
}

impl GraphFile {
    fn into_graph(self) -> Result<ServiceGraph, GraphError> {
        let nodes = self.nodes.into_iter().map(NodeFeatures::from_array).collect();
        let edges = self
            .edges
            .into_iter()
            .map(|e| EdgeRecord { src: e.src, dst: e.dst, features: EdgeFeatures::from_array(e.features) })
            .collect();
        ServiceGraph::new(nodes, edges, self.service_of)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(src: NodeId, dst: NodeId) -> EdgeRecord {
        EdgeRecord { src, dst, features: EdgeFeatures::new(1.0, 1.0, 0.0) }
    }

    fn plain_nodes(n: usize) -> Vec<NodeFeatures> {
        vec![NodeFeatures::new(0.5, 1.0, 0.0); n]
    }

    #[test]
    fn empty_graph_is_valid() {
        assert!(validate_graph(&ServiceGraph::empty()).is_ok());
    }

    #[test]
    fn self_loop_and_dangling_edges_are_reported() {
        let g = ServiceGraph::from_parts_unchecked(plain_nodes(2), vec![edge(0, 0)], vec![0, 1]);
        let v = validate_graph(&g).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind(), "self-loop");

        let g = ServiceGraph::from_parts_unchecked(plain_nodes(2), vec![edge(0, 5)], vec![0, 1]);
        let v = validate_graph(&g).unwrap_err();
        assert_eq!(v[0].kind(), "dangling edge");
    }

    #[test]
    fn duplicate_edge_and_bad_features_are_reported() {
        let mut nodes = plain_nodes(2);
        nodes[1].cpu_utilization = 1.5;
        let mut e = edge(0, 1);
        e.features.stability = -0.1;
        let g = ServiceGraph::from_parts_unchecked(nodes, vec![e, edge(0, 1)], vec![0, 1]);
        let kinds: Vec<_> = validate_graph(&g).unwrap_err().iter().map(|v| v.kind()).collect();
        assert!(kinds.contains(&"duplicate edge"));
        assert_eq!(kinds.iter().filter(|k| **k == "feature out of range").count(), 2);
        assert!(ServiceGraph::new(plain_nodes(2), vec![edge(0, 1), edge(0, 1)], vec![0, 1]).is_err());
    }

    #[test]
    fn out_neighbors_order_and_errors() {
        let path = ServiceGraph::new(plain_nodes(3), vec![edge(0, 1), edge(1, 2)], vec![0, 1, 2]).unwrap();
        assert_eq!(path.out_neighbors(0).unwrap(), vec![(1, 0)]);
        assert!(path.out_neighbors(2).unwrap().is_empty());
        assert!(matches!(path.out_neighbors(3), Err(GraphError::UnknownNode(3))));

        let star = ServiceGraph::new(
            plain_nodes(4),
            vec![edge(0, 3), edge(0, 1), edge(0, 2)],
            vec![0, 1, 2, 3],
        )
        .unwrap();
        let ids: Vec<_> = star.out_neighbors(0).unwrap().into_iter().map(|(j, _)| j).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(star.find_edge(0, 2), Some(2));
        assert_eq!(star.find_edge(2, 0), None);
    }

    #[test]
    fn feature_stats_small_cases() {
        let g = ServiceGraph::new(vec![NodeFeatures::new(0.5, 10.0, 2.0)], vec![], vec![0]).unwrap();
        let s = feature_stats([&g]).unwrap();
        assert_eq!(s.node_mean, vec![0.5, 10.0, 2.0]);
        assert_eq!(s.node_std, vec![0.0; 3]);

        let g = ServiceGraph::new(
            vec![NodeFeatures::new(0.0, 0.0, 0.0), NodeFeatures::new(1.0, 0.0, 0.0)],
            vec![],
            vec![0, 1],
        )
        .unwrap();
        let s = feature_stats([&g]).unwrap();
        assert_eq!(s.node_mean, vec![0.5, 0.0, 0.0]);
        assert_eq!(s.node_std, vec![0.5, 0.0, 0.0]);

        assert!(matches!(feature_stats(std::iter::empty::<&ServiceGraph>()), Err(GraphError::EmptyDataset)));
        assert!(matches!(feature_stats([&ServiceGraph::empty()]), Err(GraphError::EmptyDataset)));
    }

    #[test]
    fn normalize_small_cases() {
        let g = ServiceGraph::new(vec![NodeFeatures::new(1.0, 4.0, 6.0)], vec![], vec![0]).unwrap();
        let mut s = FeatureStats::identity();
        s.node_std = vec![2.0; 3];
        let z = normalize_features(&g, &s).unwrap();
        assert_eq!(z.node(0).to_array(), [0.5, 2.0, 3.0]);

        let s = feature_stats([&g]).unwrap();
        let z = normalize_features(&g, &s).unwrap();
        assert_eq!(z.node(0).to_array(), [0.0; 3]);

        let mut bad = FeatureStats::identity();
        bad.edge_std.pop();
        assert!(matches!(normalize_features(&g, &bad), Err(GraphError::DimensionMismatch { .. })));
    }

    #[test]
    fn json_rejects_invalid_graph() {
        let text = r#"{"nodes":[[0.1,1.0,0.0]],"edges":[{"src":0,"dst":0,"features":[1.0,1.0,0.0]}],"service_of":[0]}"#;
        assert!(matches!(ServiceGraph::from_json(text), Err(GraphError::Invalid(_))));
    }
}

//! Edge-aware graph attention router.
//!
//! Each layer computes, for every node `i` with out-neighbors `N(i)`,
//!
//! ```text
//! z_ij    = LeakyReLU(a · [Wq h_i || Wk h_j || e_ij])
//! α_ij    = softmax_{j ∈ N(i)} z_ij
//! h'_i    = ReLU(W1 h_i + Σ_j α_ij W2 h_j)
//! ```
//!
//! A pair scorer `MLP([h_i || h_j])` ranks candidate targets, a softmax over
//! the candidates turns scores into a route distribution, and a second
//! perceptron with a softplus output predicts hop latency and jitter.

mod backward;
mod params;

pub use backward::{activation_pattern, backprop_sample, sample_loss, SampleGrad, Supervision};
pub use params::{glorot_bound, init_params, AttentionMode, GnnConfig, GnnParams, LayerParams, Mlp};

use thiserror::Error;

use crate::graph::{NodeId, ServiceGraph, EDGE_DIM};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum GnnError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no candidates")]
    NoCandidates,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Node embeddings per layer; `layers[0]` is the input features.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub layers: Vec<Matrix>,
}

impl Embeddings {
    pub fn last(&self) -> &Matrix {
        self.layers.last().expect("at least the input layer")
    }
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub input: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    /// `W2 h_j` per node.
    pub message: Matrix,
    /// Pre-activation per node.
    pub pre: Matrix,
    /// Attention logits before LeakyReLU, per edge.
    pub logits: Vec<f64>,
    /// Attention coefficients per edge.
    pub alpha: Vec<f64>,
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn node_features_matrix(g: &ServiceGraph) -> Matrix {
    Matrix::from_vec(g.n_nodes(), 3, g.nodes().iter().flat_map(|n| n.to_array()).collect())
}

fn check_layer(h: &Matrix, g: &ServiceGraph, layer: &LayerParams) -> Result<(), GnnError> {
    let d = layer.out_dim();
    let d_in = layer.in_dim();
    if h.rows != g.n_nodes() || h.cols != d_in {
        return Err(GnnError::ShapeMismatch(format!(
            "embeddings {}x{} for {} nodes and layer input {d_in}",
            h.rows,
            h.cols,
            g.n_nodes()
        )));
    }
    for m in [&layer.w_neigh, &layer.w_query, &layer.w_key] {
        if m.shape() != (d, d_in) {
            return Err(GnnError::ShapeMismatch(format!("layer weight {:?}, expected {:?}", m.shape(), (d, d_in))));
        }
    }
    if layer.attn.shape() != (1, 2 * d + EDGE_DIM) {
        return Err(GnnError::ShapeMismatch(format!(
            "attention vector {:?}, expected {:?}",
            layer.attn.shape(),
            (1, 2 * d + EDGE_DIM)
        )));
    }
    Ok(())
}

/// Per-edge attention logits (pre-LeakyReLU) and coefficients.
fn attention_parts(
    query: &Matrix,
    key: &Matrix,
    g: &ServiceGraph,
    layer: &LayerParams,
    slope: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d = layer.out_dim();
    let a = &layer.attn.data;
    let (a_q, rest) = a.split_at(d);
    let (a_k, a_e) = rest.split_at(d);
    let sq: Vec<f64> = (0..g.n_nodes()).map(|i| dot(a_q, query.row(i))).collect();
    let sk: Vec<f64> = (0..g.n_nodes()).map(|j| dot(a_k, key.row(j))).collect();

    let mut logits = vec![0.0; g.n_edges()];
    let mut alpha = vec![0.0; g.n_edges()];
    for i in 0..g.n_nodes() {
        let out = g.out_edges(i);
        if out.is_empty() {
            continue;
        }
        let mut max = f64::NEG_INFINITY;
        for &e in out {
            let edge = g.edge(e);
            let z = sq[i] + sk[edge.dst] + dot(a_e, &edge.features.to_array());
            logits[e] = z;
            max = max.max(leaky_relu(z, slope));
        }
        let mut total = 0.0;
        for &e in out {
            let w = (leaky_relu(logits[e], slope) - max).exp();
            alpha[e] = w;
            total += w;
        }
        for &e in out {
            alpha[e] /= total;
        }
    }
    (logits, alpha)
}

fn uniform_alpha(g: &ServiceGraph) -> Vec<f64> {
    let mut alpha = vec![0.0; g.n_edges()];
    for i in 0..g.n_nodes() {
        let out = g.out_edges(i);
        for &e in out {
            alpha[e] = 1.0 / out.len() as f64;
        }
    }
    alpha
}

/// Edge-feature-aware attention coefficients, indexed by edge.
///
/// Every edge belongs to exactly one source's neighborhood, so every entry is
/// defined; nodes without out-edges simply own no entries.
pub fn attention_coefficients(
    h: &Matrix,
    g: &ServiceGraph,
    layer: &LayerParams,
    slope: f64,
) -> Result<Vec<f64>, GnnError> {
    check_layer(h, g, layer)?;
    let query = h.map_rows(&layer.w_query);
    let key = h.map_rows(&layer.w_key);
    Ok(attention_parts(&query, &key, g, layer, slope).1)
}

/// Coefficients a layer actually uses under `mode`.
pub fn layer_attention(
    h: &Matrix,
    g: &ServiceGraph,
    layer: &LayerParams,
    slope: f64,
    mode: AttentionMode,
) -> Result<Vec<f64>, GnnError> {
    match mode {
        AttentionMode::EdgeAware => attention_coefficients(h, g, layer, slope),
        AttentionMode::Uniform => {
            check_layer(h, g, layer)?;
            Ok(uniform_alpha(g))
        }
    }
}

/// One propagation step with caller-supplied coefficients.
pub fn layer_forward_with(
    h: &Matrix,
    g: &ServiceGraph,
    layer: &LayerParams,
    alpha: &[f64],
) -> Result<Matrix, GnnError> {
    check_layer(h, g, layer)?;
    if alpha.len() != g.n_edges() {
        return Err(GnnError::ShapeMismatch(format!("{} coefficients for {} edges", alpha.len(), g.n_edges())));
    }
    let message = h.map_rows(&layer.w_neigh);
    let mut pre = h.map_rows(&layer.w_self);
    aggregate(&mut pre, &message, g, alpha);
    pre.data.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(pre)
}

fn aggregate(pre: &mut Matrix, message: &Matrix, g: &ServiceGraph, alpha: &[f64]) {
    for i in 0..g.n_nodes() {
        for &e in g.out_edges(i) {
            let j = g.edge(e).dst;
            let a = alpha[e];
            let (row, msg) = (pre.row_mut(i), message.row(j));
            for (p, m) in row.iter_mut().zip(msg) {
                *p += a * m;
            }
        }
    }
}

/// One propagation step with edge-aware attention.
pub fn layer_forward(h: &Matrix, g: &ServiceGraph, layer: &LayerParams, slope: f64) -> Result<Matrix, GnnError> {
    let alpha = attention_coefficients(h, g, layer, slope)?;
    layer_forward_with(h, g, layer, &alpha)
}

pub(crate) fn layer_forward_traced(
    input: Matrix,
    g: &ServiceGraph,
    layer: &LayerParams,
    slope: f64,
    mode: AttentionMode,
) -> (Matrix, LayerTrace) {
    let query = input.map_rows(&layer.w_query);
    let key = input.map_rows(&layer.w_key);
    let (logits, alpha) = match mode {
        AttentionMode::EdgeAware => attention_parts(&query, &key, g, layer, slope),
        AttentionMode::Uniform => (vec![0.0; g.n_edges()], uniform_alpha(g)),
    };
    let message = input.map_rows(&layer.w_neigh);
    let mut pre = input.map_rows(&layer.w_self);
    aggregate(&mut pre, &message, g, &alpha);
    let mut out = pre.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    (out, LayerTrace { input, query, key, message, pre, logits, alpha })
}

pub(crate) fn encode_traced(g: &ServiceGraph, params: &GnnParams) -> Result<(Matrix, Vec<LayerTrace>), GnnError> {
    params.check_shapes()?;
    let cfg = &params.config;
    let mut h = node_features_matrix(g);
    let mut traces = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        check_layer(&h, g, layer)?;
        let (next, trace) = layer_forward_traced(h, g, layer, cfg.leaky_slope, cfg.attention);
        traces.push(trace);
        h = next;
    }
    Ok((h, traces))
}

/// Runs all layers over a (normalized) graph. `layers[0]` is the input.
pub fn encode(g: &ServiceGraph, params: &GnnParams) -> Result<Embeddings, GnnError> {
    let (last, traces) = encode_traced(g, params)?;
    let mut layers: Vec<Matrix> = traces.into_iter().map(|t| t.input).collect();
    layers.push(last);
    Ok(Embeddings { layers })
}

fn pair_input(h_i: &[f64], h_j: &[f64], mlp: &Mlp) -> Result<Vec<f64>, GnnError> {
    if h_i.len() + h_j.len() != mlp.input() || h_i.len() != h_j.len() {
        return Err(GnnError::ShapeMismatch(format!(
            "pair of {} + {} for a head expecting {}",
            h_i.len(),
            h_j.len(),
            mlp.input()
        )));
    }
    Ok([h_i, h_j].concat())
}

/// Route score `MLP([h_i || h_j])`. Order matters.
pub fn score_pair(h_i: &[f64], h_j: &[f64], params: &GnnParams) -> Result<f64, GnnError> {
    let x = pair_input(h_i, h_j, &params.scorer)?;
    Ok(params.scorer.forward(&x).1[0])
}

/// Predicted `(latency_ms, jitter_ms)` for the hop `i -> j`; both `>= 0`.
pub fn predict_path_metrics(h_i: &[f64], h_j: &[f64], params: &GnnParams) -> Result<(f64, f64), GnnError> {
    let x = pair_input(h_i, h_j, &params.regressor)?;
    let out = params.regressor.forward(&x).1;
    Ok((softplus(out[0]), softplus(out[1])))
}

/// Softmax over candidate scores, max-subtracted.
pub fn route_distribution(scores: &[f64]) -> Result<Vec<f64>, GnnError> {
    if scores.is_empty() {
        return Err(GnnError::NoCandidates);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(GnnError::NonFinite("scores"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// First index of the maximum.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(k);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub probabilities: Vec<f64>,
    pub chosen: usize,
    pub scores: Vec<f64>,
    /// `(latency_ms, jitter_ms)` per candidate.
    pub predictions: Vec<(f64, f64)>,
}

/// Scores candidates from already computed final embeddings.
pub fn decide_from_embeddings(
    h: &Matrix,
    params: &GnnParams,
    source: NodeId,
    candidates: &[NodeId],
) -> Result<RouteDecision, GnnError> {
    if candidates.is_empty() {
        return Err(GnnError::NoCandidates);
    }
    for &n in std::iter::once(&source).chain(candidates) {
        if n >= h.rows {
            return Err(GnnError::UnknownNode(n));
        }
    }
    let h_i = h.row(source);
    let mut scores = Vec::with_capacity(candidates.len());
    let mut predictions = Vec::with_capacity(candidates.len());
    for &j in candidates {
        scores.push(score_pair(h_i, h.row(j), params)?);
        predictions.push(predict_path_metrics(h_i, h.row(j), params)?);
    }
    let probabilities = route_distribution(&scores)?;
    // Greedy on the scores themselves so exact ties keep the lowest index.
    let chosen = argmax_first(&scores).expect("non-empty");
    Ok(RouteDecision { probabilities, chosen, scores, predictions })
}

/// Encode, score every candidate, softmax, pick the argmax.
pub fn decide(
    g: &ServiceGraph,
    params: &GnnParams,
    source: NodeId,
    candidates: &[NodeId],
) -> Result<RouteDecision, GnnError> {
    let (h, _) = encode_traced(g, params)?;
    decide_from_embeddings(&h, params, source, candidates)
}

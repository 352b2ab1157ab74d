//! Supervised training against simulator oracle labels.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{
    activation_pattern, backprop_sample, decide, init_params, sample_loss, GnnConfig, GnnError, GnnParams,
    Supervision,
};
use crate::graph::{
    feature_stats, normalize_features, EdgeFeatures, EdgeRecord, FeatureStats, GraphError, NodeFeatures, NodeId,
    ServiceGraph,
};
use crate::sim::DecisionSample;

pub const MIN_DATASET: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {MIN_DATASET} samples, got {0}")]
    TooFewSamples(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("numerical divergence at epoch {epoch}")]
    Divergence { epoch: usize, report: TrainReport },
    #[error("numerical divergence")]
    NonFiniteLoss,
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of the latency/jitter regression term.
    pub loss_weight_regression: f64,
    pub seed: u64,
    pub grad_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_weight_regression: 0.5,
            seed: 0,
            grad_clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("learning_rate, epsilon and grad_clip_norm must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.loss_weight_regression >= 0.0) {
            return bad("loss_weight_regression must be >= 0");
        }
        Ok(())
    }
}

/// A decision with its snapshot already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub graph: ServiceGraph,
    pub source: NodeId,
    pub candidates: Vec<NodeId>,
    pub oracle_best: usize,
    pub latency_ms: Vec<f64>,
    pub jitter_ms: Vec<f64>,
}

impl TrainSample {
    pub fn from_decision(s: &DecisionSample, stats: &FeatureStats) -> Result<Self, GraphError> {
        Ok(Self {
            graph: normalize_features(&s.snapshot, stats)?,
            source: s.source,
            candidates: s.candidates.clone(),
            oracle_best: s.oracle_best,
            latency_ms: s.realized_latency_ms.clone(),
            jitter_ms: s.realized_jitter_ms.clone(),
        })
    }

    pub fn supervision(&self) -> Supervision<'_> {
        Supervision {
            source: self.source,
            candidates: &self.candidates,
            best: self.oracle_best,
            latency_ms: &self.latency_ms,
            jitter_ms: &self.jitter_ms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<TrainSample>,
    pub validation: Vec<TrainSample>,
    /// Computed on the training split only.
    pub stats: FeatureStats,
}

/// Seeded 80/20 shuffle-split; normalization statistics come from the training split.
pub fn make_dataset(samples: &[DecisionSample], split_seed: u64) -> Result<Dataset, TrainError> {
    let (train_idx, val_idx) = split_indices(samples.len(), split_seed)?;
    let stats = feature_stats(train_idx.iter().map(|&k| &samples[k].snapshot).collect::<Vec<_>>())?;
    let convert = |idx: &[usize]| -> Result<Vec<_>, GraphError> {
        idx.iter().map(|&k| TrainSample::from_decision(&samples[k], &stats)).collect()
    };
    Ok(Dataset { train: convert(&train_idx)?, validation: convert(&val_idx)?, stats })
}

/// Indices of the training and validation splits.
pub fn split_indices(n: usize, split_seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if n < MIN_DATASET {
        return Err(TrainError::TooFewSamples(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_val = n / 5;
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Mean per-sample loss over a batch.
pub fn loss(batch: &[TrainSample], params: &GnnParams, lambda: f64) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = 0.0;
    for s in batch {
        total += sample_loss(&s.graph, params, &s.supervision(), lambda)?.0;
    }
    let mean = total / batch.len() as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(TrainError::NonFiniteLoss)
    }
}

/// Cross-entropy and regression terms averaged over a batch.
pub fn loss_terms(batch: &[TrainSample], params: &GnnParams) -> Result<(f64, f64), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let (mut ce, mut reg) = (0.0, 0.0);
    for s in batch {
        let (_, c, r) = sample_loss(&s.graph, params, &s.supervision(), 0.0)?;
        ce += c;
        reg += r;
    }
    let n = batch.len() as f64;
    Ok((ce / n, reg / n))
}

/// Mean loss and its analytic gradient. Per-sample work may run in parallel;
/// the reduction order is fixed.
pub fn grad(batch: &[TrainSample], params: &GnnParams, lambda: f64) -> Result<(f64, GnnParams), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let parts: Vec<_> = batch
        .par_iter()
        .map(|s| backprop_sample(&s.graph, params, &s.supervision(), lambda))
        .collect::<Result<_, _>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        loss += part.loss;
        let g = part.grad.expect("gradient requested");
        let flat = g.tensors();
        let mut k = 0;
        total.for_each_tensor_mut(|_, m| {
            for (t, v) in m.data.iter_mut().zip(&flat[k].1.data) {
                *t += v;
            }
            k += 1;
        });
    }
    total.for_each_tensor_mut(|_, m| m.data.iter_mut().for_each(|v| *v *= scale));
    let loss = loss * scale;
    if !loss.is_finite() || !total.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok((loss, total))
}

/// Central differences `(f(θ + ε e_k) − f(θ − ε e_k)) / 2ε` for every coordinate.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], epsilon: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            probe[k] = theta[k] + epsilon;
            let plus = f(&probe);
            probe[k] = theta[k] - epsilon;
            let minus = f(&probe);
            probe[k] = theta[k];
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

/// Numeric gradient of [`loss`], shaped like the parameters.
pub fn fd_grad(batch: &[TrainSample], params: &GnnParams, lambda: f64, epsilon: f64) -> Result<GnnParams, TrainError> {
    loss(batch, params, lambda)?;
    let mut probe = params.clone();
    let flat = central_difference(
        |theta| {
            probe.set_flat(theta);
            loss(batch, &probe, lambda).unwrap_or(f64::NAN)
        },
        &params.flatten(),
        epsilon,
    );
    let mut out = params.clone();
    out.set_flat(&flat);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates entering the maximum.
    pub compared: usize,
    /// Coordinates below the magnitude floor.
    pub negligible: usize,
    /// Coordinates whose stencil crosses a ReLU/LeakyReLU kink, where the
    /// central difference does not estimate the derivative.
    pub kinked: usize,
    pub worst: Option<String>,
    /// `ulp(loss) / 2ε`: the central difference of a correctly rounded loss
    /// cannot resolve gradients more finely than this.
    pub fd_resolution: f64,
    /// Compared coordinates whose magnitude is below `fd_resolution / 1e-4`,
    /// where a relative error under 1e-4 is not guaranteed even for an exact gradient.
    pub near_resolution: usize,
}

/// Magnitude floor `|analytic| + |numeric|` below which a coordinate is not compared.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

/// Analytic vs. central-difference gradient, relative error
/// `|a − n| / max(|a|, |n|)` over coordinates above [`GRADCHECK_FLOOR`].
pub fn gradient_check(
    batch: &[TrainSample],
    params: &GnnParams,
    lambda: f64,
    epsilon: f64,
) -> Result<GradCheckReport, TrainError> {
    let (value, analytic) = grad(batch, params, lambda)?;
    let fd_resolution = value.abs() * f64::EPSILON / (2.0 * epsilon);
    let numeric = fd_grad(batch, params, lambda, epsilon)?;
    let names: Vec<String> = params
        .tensors()
        .iter()
        .flat_map(|(name, m)| (0..m.data.len()).map(move |k| format!("{name}[{k}]")))
        .collect();
    let base_pattern = patterns(batch, params)?;
    let theta = params.flatten();
    let (a, n) = (analytic.flatten(), numeric.flatten());
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        compared: 0,
        negligible: 0,
        kinked: 0,
        worst: None,
        fd_resolution,
        near_resolution: 0,
    };
    for k in 0..theta.len() {
        if a[k].abs() + n[k].abs() <= GRADCHECK_FLOOR {
            report.negligible += 1;
            continue;
        }
        let mut crosses = false;
        for sign in [1.0, -1.0] {
            let mut t = theta.clone();
            t[k] += sign * epsilon;
            probe.set_flat(&t);
            crosses |= patterns(batch, &probe)? != base_pattern;
        }
        if crosses {
            report.kinked += 1;
            continue;
        }
        report.compared += 1;
        let rel = (a[k] - n[k]).abs() / a[k].abs().max(n[k].abs());
        if a[k].abs().max(n[k].abs()) < fd_resolution / 1e-4 {
            report.near_resolution += 1;
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(names[k].clone());
        }
    }
    Ok(report)
}

/// Random directed graph with `n` nodes, no self-loops and features in
/// [-1.5, 1.5), the range of normalized telemetry.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, p_edge: f64) -> ServiceGraph {
    let nodes = (0..n)
        .map(|_| NodeFeatures::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
        .collect();
    let mut edges = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if src != dst && rng.random_bool(p_edge) {
                let features = EdgeFeatures::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
                edges.push(EdgeRecord { src, dst, features });
            }
        }
    }
    ServiceGraph::from_parts_unchecked(nodes, edges, (0..n).collect())
}

/// A decision on a random graph of 2..=`max_nodes` nodes whose source has at least one out-neighbor.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize) -> TrainSample {
    assert!(max_nodes >= 2, "need at least two nodes");
    loop {
        let n = rng.random_range(2..=max_nodes);
        let graph = random_graph(rng, n, 0.5);
        let source = rng.random_range(0..n);
        let candidates: Vec<NodeId> = graph.out_edges(source).iter().map(|&e| graph.edge(e).dst).collect();
        if candidates.is_empty() {
            continue;
        }
        let k = candidates.len();
        return TrainSample {
            oracle_best: rng.random_range(0..k),
            latency_ms: (0..k).map(|_| rng.random_range(1.0..20.0)).collect(),
            jitter_ms: (0..k).map(|_| rng.random_range(0.1..5.0)).collect(),
            graph,
            source,
            candidates,
        };
    }
}

/// Seed of the default gradient-check draw.
pub const GRADCHECK_SEED: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub max_rel_error: f64,
    pub instances: Vec<GradCheckReport>,
}

/// [`gradient_check`] on `count` random decisions of at most six nodes, each
/// against a fresh two-layer model of width four seeded by its index.
pub fn gradcheck_property(seed: u64, count: usize, lambda: f64, epsilon: f64) -> Result<GradCheckSummary, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(count);
    for trial in 0..count {
        let batch = vec![random_instance(&mut rng, 6)];
        let cfg = GnnConfig { n_layers: 2, embed_dim: 4, mlp_hidden: 4, seed: trial as u64, ..Default::default() };
        instances.push(gradient_check(&batch, &init_params(&cfg)?, lambda, epsilon)?);
    }
    let max_rel_error = instances.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckSummary { max_rel_error, instances })
}

fn patterns(batch: &[TrainSample], params: &GnnParams) -> Result<Vec<Vec<bool>>, TrainError> {
    Ok(batch
        .iter()
        .map(|s| activation_pattern(&s.graph, params, &s.supervision()))
        .collect::<Result<_, _>>()?)
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GnnParams,
    pub v: GnnParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &GnnParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

pub fn global_norm(g: &GnnParams) -> f64 {
    g.tensors().iter().flat_map(|(_, m)| m.data.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Clips `grads` to `grad_clip_norm` (global L2), then applies one bias-corrected Adam update.
pub fn adam_step(params: &mut GnnParams, grads: &GnnParams, state: &mut AdamState, cfg: &TrainConfig) {
    let norm = global_norm(grads);
    let clip = if norm > cfg.grad_clip_norm { cfg.grad_clip_norm / norm } else { 1.0 };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let g_flat: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, m)| m.data.clone()).collect();
    let mut m_all: Vec<Vec<f64>> = Vec::new();
    state.m.for_each_tensor_mut(|k, m| {
        for (mi, gi) in m.data.iter_mut().zip(&g_flat[k]) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi * clip;
        }
        m_all.push(m.data.clone());
    });
    let mut v_all: Vec<Vec<f64>> = Vec::new();
    state.v.for_each_tensor_mut(|k, v| {
        for (vi, gi) in v.data.iter_mut().zip(&g_flat[k]) {
            let g = gi * clip;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        }
        v_all.push(v.data.clone());
    });
    params.for_each_tensor_mut(|k, p| {
        for ((pi, mi), vi) in p.data.iter_mut().zip(&m_all[k]).zip(&v_all[k]) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *pi -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches.
    pub loss: f64,
    pub val_accuracy: f64,
    /// Wall clock; not part of any determinism guarantee.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,loss,val_accuracy,seconds";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.loss, e.val_accuracy, e.seconds)?;
        }
        Ok(())
    }

    /// Same losses and accuracies, ignoring wall clock.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.val_accuracy.to_bits() == b.val_accuracy.to_bits()
            })
    }
}

/// Fraction of samples where the greedy choice equals the oracle label.
pub fn decision_accuracy(params: &GnnParams, samples: &[TrainSample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|s| decide(&s.graph, params, s.source, &s.candidates).map(|d| d.chosen == s.oracle_best))
        .collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / samples.len() as f64)
}

fn is_numerical(e: &TrainError) -> bool {
    matches!(e, TrainError::NonFiniteLoss | TrainError::Model(GnnError::NonFinite(_)))
}

/// Trains from `init_params(gnn_cfg)`.
pub fn train_model(
    dataset: &Dataset,
    gnn_cfg: &GnnConfig,
    cfg: &TrainConfig,
) -> Result<(GnnParams, TrainReport), TrainError> {
    train_model_with(dataset, gnn_cfg, cfg, |_, _| {})
}

/// As [`train_model`], calling `on_epoch(epoch, params)` after every epoch.
pub fn train_model_with(
    dataset: &Dataset,
    gnn_cfg: &GnnConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &GnnParams),
) -> Result<(GnnParams, TrainReport), TrainError> {
    cfg.validate()?;
    let mut params = init_params(gnn_cfg)?;
    let mut state = AdamState::new(&params);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let lambda = cfg.loss_weight_regression;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&k| dataset.train[k].clone()).collect();
            match grad(&batch, &params, lambda) {
                Ok((l, g)) => {
                    adam_step(&mut params, &g, &mut state, cfg);
                    loss_sum += l;
                    batches += 1;
                }
                Err(e) if is_numerical(&e) => return Err(TrainError::Divergence { epoch, report }),
                Err(e) => return Err(e),
            }
        }
        if !params.is_finite() {
            return Err(TrainError::Divergence { epoch, report });
        }
        let val_accuracy = match decision_accuracy(&params, &dataset.validation) {
            Ok(a) => a,
            Err(e) if is_numerical(&e) => return Err(TrainError::Divergence { epoch, report }),
            Err(e) => return Err(e),
        };
        report.epochs.push(EpochStats {
            epoch,
            loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
        on_epoch(epoch, &params);
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_determinism() {
        let (t, v) = split_indices(10, 3).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        assert_eq!(split_indices(10, 3).unwrap(), (t, v));
        assert!(matches!(split_indices(9, 0), Err(TrainError::TooFewSamples(9))));
    }

    #[test]
    fn central_difference_on_a_quadratic() {
        let g = central_difference(|t| t[0] * t[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        // even function: derivative flips sign with the coordinate
        let plus = central_difference(|t| t[0].powi(4), &[1.5], 1e-5)[0];
        let minus = central_difference(|t| t[0].powi(4), &[-1.5], 1e-5)[0];
        assert!((plus + minus).abs() < 1e-6);
    }

    fn toy_params() -> GnnParams {
        init_params(&GnnConfig { n_layers: 1, embed_dim: 2, mlp_hidden: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = toy_params();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut state, &TrainConfig::default());
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_against_the_gradient() {
        let mut p = toy_params();
        let before = p.flatten();
        let mut g = p.zeros_like();
        let mut k = 0;
        g.for_each_tensor_mut(|_, m| {
            for v in &mut m.data {
                *v = if k % 2 == 0 { 0.3 } else { -0.2 };
                k += 1;
            }
        });
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &cfg);
        for ((after, before), grad) in p.flatten().iter().zip(&before).zip(g.flatten()) {
            let delta = after - before;
            assert!(delta * grad < 0.0);
            assert!((delta.abs() - cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate + 1e-7);
        }
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let p = toy_params();
        let mut g = p.zeros_like();
        g.for_each_tensor_mut(|_, m| m.fill(100.0));
        let cfg = TrainConfig::default();
        let mut clipped_state = AdamState::new(&p);
        let mut q = p.clone();
        adam_step(&mut q, &g, &mut clipped_state, &cfg);
        let m_norm = global_norm(&clipped_state.m) / (1.0 - cfg.beta1);
        assert!((m_norm - cfg.grad_clip_norm).abs() < 1e-9);
    }

    #[test]
    fn report_csv_header() {
        let mut buf = Vec::new();
        TrainReport { epochs: vec![EpochStats { epoch: 0, loss: 1.5, val_accuracy: 0.5, seconds: 0.1 }] }
            .write_csv(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,loss,val_accuracy,seconds\n0,1.5,0.5,"));
    }
}

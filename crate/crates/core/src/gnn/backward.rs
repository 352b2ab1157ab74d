//! Reverse-mode gradients of the per-decision training loss.
//!
//! Loss for one decision with candidates `C`, scores `s`, oracle index `b`
//! and regression targets `(t_lat, t_jit)` per candidate:
//!
//! ```text
//! CE  = logsumexp(s) - s_b
//! REG = mean_k [ (log1p(lat_k) - log1p(t_lat_k))^2 + (log1p(jit_k) - log1p(t_jit_k))^2 ]
//! L   = CE + λ · REG
//! ```

use super::{encode_traced, route_distribution, sigmoid, softplus, AttentionMode, GnnError, GnnParams, LayerTrace, Mlp};
use crate::graph::{NodeId, ServiceGraph, EDGE_DIM};
use crate::tensor::{axpy, dot, Matrix};

/// Supervision for one decision.
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a> {
    pub source: NodeId,
    pub candidates: &'a [NodeId],
    pub best: usize,
    pub latency_ms: &'a [f64],
    pub jitter_ms: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub loss: f64,
    pub cross_entropy: f64,
    pub regression: f64,
    /// Same shapes as the parameters; `None` when only the loss was requested.
    pub grad: Option<GnnParams>,
}

struct HeadPass {
    x: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

struct Forward {
    h: Matrix,
    traces: Vec<LayerTrace>,
    scorer: Vec<HeadPass>,
    regressor: Vec<HeadPass>,
    probs: Vec<f64>,
    cross_entropy: f64,
    regression: f64,
}

fn head(mlp: &Mlp, x: Vec<f64>) -> HeadPass {
    let (hidden, out) = mlp.forward(&x);
    HeadPass { x, hidden, out }
}

fn forward(g: &ServiceGraph, params: &GnnParams, sup: &Supervision<'_>) -> Result<Forward, GnnError> {
    let k = sup.candidates.len();
    if k == 0 {
        return Err(GnnError::NoCandidates);
    }
    if sup.best >= k || sup.latency_ms.len() != k || sup.jitter_ms.len() != k {
        return Err(GnnError::ShapeMismatch("supervision does not match the candidate count".into()));
    }
    for &n in std::iter::once(&sup.source).chain(sup.candidates) {
        if n >= g.n_nodes() {
            return Err(GnnError::UnknownNode(n));
        }
    }
    let (h, traces) = encode_traced(g, params)?;
    let h_i = h.row(sup.source);
    let mut scorer = Vec::with_capacity(k);
    let mut regressor = Vec::with_capacity(k);
    for &j in sup.candidates {
        let x = [h_i, h.row(j)].concat();
        scorer.push(head(&params.scorer, x.clone()));
        regressor.push(head(&params.regressor, x));
    }
    let scores: Vec<f64> = scorer.iter().map(|p| p.out[0]).collect();
    let probs = route_distribution(&scores)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let cross_entropy = lse - scores[sup.best];

    let mut regression = 0.0;
    for (c, pass) in regressor.iter().enumerate() {
        let targets = [sup.latency_ms[c], sup.jitter_ms[c]];
        for (o, t) in pass.out.iter().zip(targets) {
            let diff = softplus(*o).ln_1p() - t.ln_1p();
            regression += diff * diff;
        }
    }
    regression /= k as f64;
    Ok(Forward { h, traces, scorer, regressor, probs, cross_entropy, regression })
}

/// Loss terms only.
pub fn sample_loss(
    g: &ServiceGraph,
    params: &GnnParams,
    sup: &Supervision<'_>,
    lambda: f64,
) -> Result<(f64, f64, f64), GnnError> {
    let f = forward(g, params, sup)?;
    Ok((f.cross_entropy + lambda * f.regression, f.cross_entropy, f.regression))
}

/// Sign pattern of every piecewise-linear unit the loss passes through.
/// Two parameter settings with equal patterns lie in the same linear region
/// of every ReLU and LeakyReLU.
pub fn activation_pattern(g: &ServiceGraph, params: &GnnParams, sup: &Supervision<'_>) -> Result<Vec<bool>, GnnError> {
    let f = forward(g, params, sup)?;
    let mut bits = Vec::new();
    for t in &f.traces {
        bits.extend(t.pre.data.iter().map(|&v| v > 0.0));
        if params.config.attention == AttentionMode::EdgeAware {
            bits.extend(t.logits.iter().map(|&v| v > 0.0));
        }
    }
    for (pass, mlp) in f.scorer.iter().map(|p| (p, &params.scorer)).chain(f.regressor.iter().map(|p| (p, &params.regressor))) {
        let pre = mlp.w1.matvec(&pass.x);
        bits.extend(pre.iter().zip(&mlp.b1.data).map(|(v, b)| v + b > 0.0));
    }
    Ok(bits)
}

/// Backpropagates one head; returns the gradient w.r.t. its input.
fn head_backward(mlp: &Mlp, pass: &HeadPass, d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
    let mut d_hidden = vec![0.0; mlp.hidden()];
    mlp.w2.matvec_t_acc(d_out, &mut d_hidden);
    grad.w2.add_outer(d_out, &pass.hidden);
    axpy(1.0, d_out, &mut grad.b2.data);
    for (dh, &h) in d_hidden.iter_mut().zip(&pass.hidden) {
        if h <= 0.0 {
            *dh = 0.0;
        }
    }
    grad.w1.add_outer(&d_hidden, &pass.x);
    axpy(1.0, &d_hidden, &mut grad.b1.data);
    let mut dx = vec![0.0; mlp.input()];
    mlp.w1.matvec_t_acc(&d_hidden, &mut dx);
    dx
}

/// Loss and its gradient with respect to every parameter.
pub fn backprop_sample(
    g: &ServiceGraph,
    params: &GnnParams,
    sup: &Supervision<'_>,
    lambda: f64,
) -> Result<SampleGrad, GnnError> {
    let f = forward(g, params, sup)?;
    let loss = f.cross_entropy + lambda * f.regression;
    let mut grad = params.zeros_like();
    let d = params.config.embed_dim;
    let k = sup.candidates.len();
    let mut dh = Matrix::zeros(f.h.rows, f.h.cols);

    for c in 0..k {
        let d_score = f.probs[c] - if c == sup.best { 1.0 } else { 0.0 };
        let dx = head_backward(&params.scorer, &f.scorer[c], &[d_score], &mut grad.scorer);
        axpy(1.0, &dx[..d], dh.row_mut(sup.source));
        axpy(1.0, &dx[d..], dh.row_mut(sup.candidates[c]));

        if lambda != 0.0 {
            let pass = &f.regressor[c];
            let targets = [sup.latency_ms[c], sup.jitter_ms[c]];
            let d_out: Vec<f64> = pass
                .out
                .iter()
                .zip(targets)
                .map(|(&o, t)| {
                    let pred = softplus(o);
                    let diff = pred.ln_1p() - t.ln_1p();
                    lambda * 2.0 * diff / k as f64 / (1.0 + pred) * sigmoid(o)
                })
                .collect();
            let dx = head_backward(&params.regressor, pass, &d_out, &mut grad.regressor);
            axpy(1.0, &dx[..d], dh.row_mut(sup.source));
            axpy(1.0, &dx[d..], dh.row_mut(sup.candidates[c]));
        }
    }

    for (l, trace) in f.traces.iter().enumerate().rev() {
        let need_input_grad = l > 0;
        dh = layer_backward(g, params, l, trace, &dh, &mut grad, need_input_grad);
    }

    Ok(SampleGrad { loss, cross_entropy: f.cross_entropy, regression: f.regression, grad: Some(grad) })
}

fn layer_backward(
    g: &ServiceGraph,
    params: &GnnParams,
    l: usize,
    t: &LayerTrace,
    d_out: &Matrix,
    grad: &mut GnnParams,
    need_input_grad: bool,
) -> Matrix {
    let layer = &params.layers[l];
    let gl = &mut grad.layers[l];
    let slope = params.config.leaky_slope;
    let n = g.n_nodes();
    let d = layer.out_dim();
    let d_in = layer.in_dim();

    let mut d_pre = d_out.clone();
    for (dp, &p) in d_pre.data.iter_mut().zip(&t.pre.data) {
        if p <= 0.0 {
            *dp = 0.0;
        }
    }

    let mut d_input = Matrix::zeros(n, d_in);
    let mut d_msg = Matrix::zeros(n, d);
    let mut d_query = Matrix::zeros(n, d);
    let mut d_key = Matrix::zeros(n, d);
    let edge_aware = params.config.attention == AttentionMode::EdgeAware;
    let (a_q, rest) = layer.attn.data.split_at(d);
    let (a_k, _) = rest.split_at(d);

    for i in 0..n {
        let dp = d_pre.row(i);
        gl.w_self.add_outer(dp, t.input.row(i));
        if need_input_grad {
            layer.w_self.matvec_t_acc(dp, d_input.row_mut(i));
        }
        let out = g.out_edges(i);
        if out.is_empty() {
            continue;
        }
        // d alpha_e = dpre_i · W2 h_j
        let d_alpha: Vec<f64> = out.iter().map(|&e| dot(dp, t.message.row(g.edge(e).dst))).collect();
        for &e in out {
            axpy(t.alpha[e], dp, d_msg.row_mut(g.edge(e).dst));
        }
        if !edge_aware {
            continue;
        }
        let mean: f64 = out.iter().zip(&d_alpha).map(|(&e, da)| t.alpha[e] * da).sum();
        let mut d_sq = 0.0;
        for (&e, da) in out.iter().zip(&d_alpha) {
            let z = t.logits[e];
            let dz = t.alpha[e] * (da - mean) * if z > 0.0 { 1.0 } else { slope };
            if dz == 0.0 {
                continue;
            }
            let edge = g.edge(e);
            d_sq += dz;
            let attn_grad = &mut gl.attn.data;
            axpy(dz, t.query.row(i), &mut attn_grad[..d]);
            axpy(dz, t.key.row(edge.dst), &mut attn_grad[d..2 * d]);
            axpy(dz, &edge.features.to_array(), &mut attn_grad[2 * d..2 * d + EDGE_DIM]);
            axpy(dz, a_k, d_key.row_mut(edge.dst));
        }
        axpy(d_sq, a_q, d_query.row_mut(i));
    }

    for j in 0..n {
        gl.w_neigh.add_outer(d_msg.row(j), t.input.row(j));
        if edge_aware {
            gl.w_query.add_outer(d_query.row(j), t.input.row(j));
            gl.w_key.add_outer(d_key.row(j), t.input.row(j));
        }
        if need_input_grad {
            let row = d_input.row_mut(j);
            layer.w_neigh.matvec_t_acc(d_msg.row(j), row);
            if edge_aware {
                layer.w_query.matvec_t_acc(d_query.row(j), row);
                layer.w_key.matvec_t_acc(d_key.row(j), row);
            }
        }
    }
    d_input
}

//! Randomized trials for the model's mathematical laws. Each returns a
//! measured error so tests and the acceptance report share one definition.

use meshgnn::gnn::{attention_coefficients, encode, init_params, GnnConfig, GnnParams, LayerParams};
use meshgnn::graph::{EdgeFeatures, EdgeRecord, NodeFeatures, ServiceGraph};
use meshgnn::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random_graph, rng};

/// Node features plus a dense `n x n` table of optional edge features.
pub struct DenseInstance {
    pub x: Vec<[f64; 3]>,
    pub edge: Vec<Vec<Option<[f64; 3]>>>,
}

impl DenseInstance {
    pub fn random(rng: &mut ChaCha8Rng, max_nodes: usize) -> Self {
        let n = rng.random_range(1..=max_nodes);
        let p = rng.random_range(0.2..0.9);
        let mut feat = || [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let x = (0..n).map(|_| feat()).collect();
        let mut edge = vec![vec![None; n]; n];
        for (i, row) in edge.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i != j && rng.random_bool(p) {
                    *cell = Some([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
                }
            }
        }
        Self { x, edge }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn to_graph(&self) -> ServiceGraph {
        let nodes = self.x.iter().map(|&a| NodeFeatures::from_array(a)).collect();
        let mut edges = Vec::new();
        for (src, row) in self.edge.iter().enumerate() {
            for (dst, cell) in row.iter().enumerate() {
                if let Some(f) = cell {
                    edges.push(EdgeRecord { src, dst, features: EdgeFeatures::from_array(*f) });
                }
            }
        }
        // Normalized features are signed, so range validation does not apply.
        ServiceGraph::from_parts_unchecked(nodes, edges, (0..self.n()).collect())
    }
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows).map(|r| (0..m.cols).map(|c| m.get(r, c) * v[c]).sum()).collect()
}

/// One layer evaluated straight from the dense tables: returns `(alpha, out)`
/// with `alpha[i][j]` zero where there is no edge.
pub fn dense_layer(
    h: &[Vec<f64>],
    inst: &DenseInstance,
    layer: &LayerParams,
    slope: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = inst.n();
    let d = layer.w_self.rows;
    let a: Vec<f64> = (0..layer.attn.cols).map(|c| layer.attn.get(0, c)).collect();
    let leaky = |z: f64| if z > 0.0 { z } else { slope * z };
    let mut alpha = vec![vec![0.0; n]; n];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let q = mat_vec(&layer.w_query, &h[i]);
        let mut z = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            if let Some(e) = inst.edge[i][j] {
                let k = mat_vec(&layer.w_key, &h[j]);
                let concat: Vec<f64> = q.iter().chain(&k).chain(e.iter()).copied().collect();
                z[j] = leaky(concat.iter().zip(&a).map(|(u, w)| u * w).sum());
            }
        }
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m > f64::NEG_INFINITY {
            let total: f64 = z.iter().map(|v| (v - m).exp()).sum();
            for j in 0..n {
                alpha[i][j] = (z[j] - m).exp() / total;
            }
        }
        let mut pre = mat_vec(&layer.w_self, &h[i]);
        for j in 0..n {
            if alpha[i][j] != 0.0 {
                let msg = mat_vec(&layer.w_neigh, &h[j]);
                for r in 0..d {
                    pre[r] += alpha[i][j] * msg[r];
                }
            }
        }
        out.push(pre.into_iter().map(|v| v.max(0.0)).collect());
    }
    (alpha, out)
}

fn random_config(rng: &mut ChaCha8Rng) -> GnnConfig {
    GnnConfig {
        n_layers: rng.random_range(1..=3),
        embed_dim: rng.random_range(1..=5),
        mlp_hidden: 3,
        seed: rng.random(),
        ..Default::default()
    }
}

/// Max absolute deviation between the graph implementation and the dense
/// evaluation, over every layer's coefficients and outputs.
pub fn dense_oracle_trial(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let inst = DenseInstance::random(&mut rng, 6);
    let g = inst.to_graph();
    let params = init_params(&random_config(&mut rng)).unwrap();
    let emb = encode(&g, &params).unwrap();
    let slope = params.config.leaky_slope;

    let mut h: Vec<Vec<f64>> = inst.x.iter().map(|a| a.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (l, layer) in params.layers.iter().enumerate() {
        let coeffs = attention_coefficients(&emb.layers[l], &g, layer, slope).unwrap();
        let (alpha, out) = dense_layer(&h, &inst, layer, slope);
        for (e, rec) in g.edges().iter().enumerate() {
            worst = worst.max((coeffs[e] - alpha[rec.src][rec.dst]).abs());
        }
        for (i, row) in out.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                worst = worst.max((emb.layers[l + 1].get(i, c) - v).abs());
            }
        }
        h = out;
    }
    worst
}

/// Largest `|Σ_j α_ij − 1|` over all nodes with out-edges and all layers;
/// `None` if any coefficient falls outside `(0, 1]`.
pub fn attention_row_error(g: &ServiceGraph, params: &GnnParams) -> Option<f64> {
    let emb = encode(g, params).unwrap();
    let mut worst: f64 = 0.0;
    for (l, layer) in params.layers.iter().enumerate() {
        let alpha = attention_coefficients(&emb.layers[l], g, layer, params.config.leaky_slope).unwrap();
        if alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return None;
        }
        for i in 0..g.n_nodes() {
            let out = g.out_edges(i);
            if !out.is_empty() {
                worst = worst.max((out.iter().map(|&e| alpha[e]).sum::<f64>() - 1.0).abs());
            }
        }
    }
    Some(worst)
}

pub fn attention_rows_trial(seed: u64) -> Option<f64> {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=10);
    let p = rng.random_range(0.1..0.9);
    let g = random_graph(&mut rng, n, p);
    let mut params = init_params(&random_config(&mut rng)).unwrap();
    // Sharper logits reach the saturated regime of the softmax too.
    let scale = rng.random_range(0.1..10.0);
    for layer in &mut params.layers {
        layer.attn.data.iter_mut().for_each(|v| *v *= scale);
    }
    attention_row_error(&g, &params)
}

/// Max deviation between `encode(π g)` and `π encode(g)` over all layers.
pub fn permutation_trial(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=12);
    let p = rng.random_range(0.1..0.7);
    let g = random_graph(&mut rng, n, p);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let params = init_params(&random_config(&mut rng)).unwrap();
    let a = encode(&g, &params).unwrap();
    let b = encode(&g.permuted(&perm), &params).unwrap();
    let mut worst: f64 = 0.0;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for i in 0..n {
            for (x, y) in la.row(i).iter().zip(lb.row(perm[i])) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// Out-edge hop distance from `i`; `usize::MAX` if unreachable.
pub fn hop_distances(g: &ServiceGraph, i: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.n_nodes()];
    let mut frontier = vec![i];
    dist[i] = 0;
    while let Some(u) = frontier.pop() {
        for &e in g.out_edges(u) {
            let v = g.edge(e).dst;
            if dist[u] + 1 < dist[v] {
                dist[v] = dist[u] + 1;
                frontier.push(v);
            }
        }
    }
    dist
}

/// Perturbs every node farther than `L` hops from some node `i` and checks
/// `h_i^(L)` is bit-identical. Returns `None` if the draw had no far nodes.
pub fn locality_trial(seed: u64) -> Option<bool> {
    let mut rng = rng(seed);
    let n = rng.random_range(3..=12);
    let p = rng.random_range(0.08..0.3);
    let g = random_graph(&mut rng, n, p);
    let params = init_params(&random_config(&mut rng)).unwrap();
    let depth = params.config.n_layers;
    let base = encode(&g, &params).unwrap();

    let mut tested = false;
    for i in 0..n {
        let dist = hop_distances(&g, i);
        let far: Vec<usize> = (0..n).filter(|&k| dist[k] > depth).collect();
        if far.is_empty() {
            continue;
        }
        tested = true;
        let mut nodes = g.nodes().to_vec();
        for &k in &far {
            nodes[k] = NodeFeatures::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
        }
        let edge_features = g.edges().iter().map(|e| e.features).collect();
        let changed = encode(&g.with_features(nodes, edge_features), &params).unwrap();
        if changed.last().row(i) != base.last().row(i) {
            return Some(false);
        }
    }
    tested.then_some(true)
}

/// Runs `trial` on consecutive seeds until `count` draws produced a verdict.
pub fn collect_trials<T>(count: usize, start: u64, trial: impl Fn(u64) -> Option<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(count);
    let mut seed = start;
    while out.len() < count {
        if let Some(v) = trial(seed) {
            out.push(v);
        }
        seed += 1;
    }
    out
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GnnError;
use crate::graph::{EDGE_DIM, NODE_DIM};
use crate::tensor::Matrix;

/// How neighbor messages are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Learned coefficients from both endpoint embeddings and the edge features.
    #[default]
    EdgeAware,
    /// Fixed `1 / |N(i)|`; the attention parameters are carried but unused.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub mlp_hidden: usize,
    pub leaky_slope: f64,
    pub seed: u64,
    #[serde(default)]
    pub attention: AttentionMode,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            embed_dim: 32,
            node_dim: NODE_DIM,
            edge_dim: EDGE_DIM,
            mlp_hidden: 32,
            leaky_slope: 0.2,
            seed: 0,
            attention: AttentionMode::EdgeAware,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.n_layers == 0 || self.embed_dim == 0 || self.mlp_hidden == 0 {
            return Err(GnnError::InvalidConfig("n_layers, embed_dim and mlp_hidden must be >= 1".into()));
        }
        if self.node_dim != NODE_DIM || self.edge_dim != EDGE_DIM {
            return Err(GnnError::InvalidConfig(format!(
                "feature schema is fixed at {NODE_DIM} node / {EDGE_DIM} edge dimensions"
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(GnnError::InvalidConfig("leaky_slope must be finite".into()));
        }
        Ok(())
    }

    /// Input width of layer `l` (0-based).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.node_dim
        } else {
            self.embed_dim
        }
    }

    pub fn uniform_attention(&self) -> Self {
        Self { attention: AttentionMode::Uniform, ..self.clone() }
    }
}

/// One propagation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Self transform, `d x d_in`.
    pub w_self: Matrix,
    /// Neighbor message transform, `d x d_in`.
    pub w_neigh: Matrix,
    /// Query transform, `d x d_in`.
    pub w_query: Matrix,
    /// Key transform, `d x d_in`.
    pub w_key: Matrix,
    /// Attention vector over `[query || key || edge]`, stored `1 x (2d + edge_dim)`.
    pub attn: Matrix,
}

impl LayerParams {
    pub fn zeros(d: usize, d_in: usize, edge_dim: usize) -> Self {
        Self {
            w_self: Matrix::zeros(d, d_in),
            w_neigh: Matrix::zeros(d, d_in),
            w_query: Matrix::zeros(d, d_in),
            w_key: Matrix::zeros(d, d_in),
            attn: Matrix::zeros(1, 2 * d + edge_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w_self.rows
    }

    pub fn in_dim(&self) -> usize {
        self.w_self.cols
    }
}

/// Two-layer perceptron with ReLU hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input),
            b1: Matrix::zeros(hidden, 1),
            w2: Matrix::zeros(output, hidden),
            b2: Matrix::zeros(output, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows
    }

    pub fn input(&self) -> usize {
        self.w1.cols
    }

    /// Hidden activations (post-ReLU) and raw outputs.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = self.w1.matvec(x);
        for (h, b) in hidden.iter_mut().zip(&self.b1.data) {
            *h = (*h + b).max(0.0);
        }
        let mut out = self.w2.matvec(&hidden);
        for (o, b) in out.iter_mut().zip(&self.b2.data) {
            *o += b;
        }
        (hidden, out)
    }
}

/// Every learnable tensor of the router.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub config: GnnConfig,
    pub layers: Vec<LayerParams>,
    /// `2d -> hidden -> 1` route scorer.
    pub scorer: Mlp,
    /// `2d -> hidden -> 2` latency/jitter head (pre-softplus).
    pub regressor: Mlp,
}

impl GnnParams {
    /// All-zero tensors with the shapes `cfg` implies.
    pub fn zeros(cfg: &GnnConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            config: cfg.clone(),
            layers: (0..cfg.n_layers).map(|l| LayerParams::zeros(d, cfg.layer_input_dim(l), cfg.edge_dim)).collect(),
            scorer: Mlp::zeros(2 * d, cfg.mlp_hidden, 1),
            regressor: Mlp::zeros(2 * d, cfg.mlp_hidden, 2),
        }
    }

    /// Same shape, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, m| m.fill(0.0));
        z
    }

    /// Tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w_self"), &layer.w_self));
            out.push((format!("layer{l}.w_neigh"), &layer.w_neigh));
            out.push((format!("layer{l}.w_query"), &layer.w_query));
            out.push((format!("layer{l}.w_key"), &layer.w_key));
            out.push((format!("layer{l}.attn"), &layer.attn));
        }
        for (name, mlp) in [("scorer", &self.scorer), ("regressor", &self.regressor)] {
            out.push((format!("{name}.w1"), &mlp.w1));
            out.push((format!("{name}.b1"), &mlp.b1));
            out.push((format!("{name}.w2"), &mlp.w2));
            out.push((format!("{name}.b2"), &mlp.b2));
        }
        out
    }

    /// Mutable visit in the same order as [`GnnParams::tensors`].
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(usize, &mut Matrix)) {
        let mut k = 0;
        let mut visit = |m: &mut Matrix| {
            f(k, m);
            k += 1;
        };
        for layer in &mut self.layers {
            visit(&mut layer.w_self);
            visit(&mut layer.w_neigh);
            visit(&mut layer.w_query);
            visit(&mut layer.w_key);
            visit(&mut layer.attn);
        }
        for mlp in [&mut self.scorer, &mut self.regressor] {
            visit(&mut mlp.w1);
            visit(&mut mlp.b1);
            visit(&mut mlp.w2);
            visit(&mut mlp.b2);
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, m)| m.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut offset = 0;
        self.for_each_tensor_mut(|_, m| {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Checks every tensor against the shapes the config implies.
    pub fn check_shapes(&self) -> Result<(), GnnError> {
        let expected = GnnParams::zeros(&self.config);
        if expected.layers.len() != self.layers.len() {
            return Err(GnnError::ShapeMismatch(format!(
                "expected {} layers, found {}",
                expected.layers.len(),
                self.layers.len()
            )));
        }
        for ((name, want), (_, got)) in expected.tensors().into_iter().zip(self.tensors()) {
            if want.shape() != got.shape() || got.data.len() != got.rows * got.cols {
                return Err(GnnError::ShapeMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`; zero biases.
pub fn init_params(cfg: &GnnConfig) -> Result<GnnParams, GnnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = GnnParams::zeros(cfg);
    let n_layer_tensors = 5 * cfg.n_layers;
    params.for_each_tensor_mut(|k, m| {
        let is_bias = k >= n_layer_tensors && (k - n_layer_tensors) % 2 == 1;
        if is_bias {
            return;
        }
        let s = glorot_bound(m.cols, m.rows);
        for v in &mut m.data {
            *v = rng.random_range(-s..=s);
        }
    });
    Ok(params)
}

/// `fan_in` is the column count, `fan_out` the row count.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

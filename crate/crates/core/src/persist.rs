//! Versioned JSON model snapshots.
//!
//! Layout: `{ format, version, config, tensors: [{name, shape, data}], stats }`,
//! tensors in row-major order and in [`GnnParams::tensors`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{GnnConfig, GnnParams};
use crate::graph::FeatureStats;
use crate::tensor::Matrix;

pub const MODEL_FORMAT: &str = "meshgnn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("truncated snapshot")]
    Truncated,
    #[error("version mismatch: snapshot has version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("not a model snapshot: {0}")]
    NotASnapshot(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("malformed snapshot: {0}")]
    Malformed(serde_json::Error),
}

impl From<serde_json::Error> for PersistError {
    fn from(e: serde_json::Error) -> Self {
        if e.classify() == serde_json::error::Category::Eof {
            PersistError::Truncated
        } else {
            PersistError::Malformed(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: GnnConfig,
    tensors: Vec<TensorRecord>,
    #[serde(default)]
    stats: Option<FeatureStats>,
}

/// Trained parameters plus the normalization they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub params: GnnParams,
    pub stats: Option<FeatureStats>,
}

pub fn model_to_json(params: &GnnParams, stats: Option<&FeatureStats>) -> Result<String, PersistError> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: params.config.clone(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorRecord { name, shape: [m.rows, m.cols], data: m.data.clone() })
            .collect(),
        stats: stats.cloned(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<ModelSnapshot, PersistError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(PersistError::NotASnapshot(format!("missing format tag \"{MODEL_FORMAT}\"")));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_VERSION as u64 => {}
        Some(found) => return Err(PersistError::VersionMismatch { found, expected: MODEL_VERSION }),
        None => return Err(PersistError::NotASnapshot("missing version".into())),
    }
    let file: ModelFile = serde_json::from_value(value).map_err(PersistError::Malformed)?;
    file.config.validate().map_err(|e| PersistError::InvalidConfig(e.to_string()))?;

    let mut params = GnnParams::zeros(&file.config);
    let expected: Vec<(String, usize, usize)> =
        params.tensors().into_iter().map(|(n, m)| (n, m.rows, m.cols)).collect();
    if expected.len() != file.tensors.len() {
        return Err(PersistError::ShapeMismatch(format!(
            "config implies {} tensors, snapshot has {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    for ((name, rows, cols), t) in expected.iter().zip(&file.tensors) {
        if *name != t.name || [*rows, *cols] != t.shape || t.data.len() != rows * cols {
            return Err(PersistError::ShapeMismatch(format!(
                "expected {name} {rows}x{cols}, found {} {}x{} with {} values",
                t.name,
                t.shape[0],
                t.shape[1],
                t.data.len()
            )));
        }
    }
    let mut k = 0;
    params.for_each_tensor_mut(|_, m| {
        let t = &file.tensors[k];
        *m = Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone());
        k += 1;
    });
    Ok(ModelSnapshot { params, stats: file.stats })
}

pub fn save_model(path: &Path, params: &GnnParams, stats: Option<&FeatureStats>) -> Result<(), PersistError> {
    fs::write(path, model_to_json(params, stats)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelSnapshot, PersistError> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Loads and checks the architecture against the one the caller expects.
pub fn load_model_expecting(path: &Path, expected: &GnnConfig) -> Result<ModelSnapshot, PersistError> {
    let snap = load_model(path)?;
    check_architecture(&snap.params.config, expected)?;
    Ok(snap)
}

fn check_architecture(found: &GnnConfig, expected: &GnnConfig) -> Result<(), PersistError> {
    let dims = |c: &GnnConfig| (c.n_layers, c.embed_dim, c.node_dim, c.edge_dim, c.mlp_hidden);
    if dims(found) != dims(expected) {
        return Err(PersistError::ShapeMismatch(format!(
            "snapshot has L={} d={} hidden={}, expected L={} d={} hidden={}",
            found.n_layers, found.embed_dim, found.mlp_hidden, expected.n_layers, expected.embed_dim, expected.mlp_hidden
        )));
    }
    Ok(())
}

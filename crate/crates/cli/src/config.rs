//! Run configuration, run directories and error classification.

use std::fs;
use std::path::{Path, PathBuf};

use meshgnn::eval::{EvalError, ExperimentConfig};
use meshgnn::gnn::GnnError;
use meshgnn::persist::PersistError;
use meshgnn::sim::SimError;
use meshgnn::train::TrainError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 2,
            CliError::Divergence(_) => 3,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

fn is_numerical(e: &TrainError) -> bool {
    matches!(e, TrainError::Divergence { .. } | TrainError::NonFiniteLoss | TrainError::Model(GnnError::NonFinite(_)))
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Train(t) if is_numerical(t) => CliError::Divergence(e.to_string()),
            EvalError::Model(GnnError::NonFinite(_)) => CliError::Divergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if is_numerical(&e) {
            CliError::Divergence(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Settings shared by the sweep subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Layer counts for `sweep-depth`; empty means the built-in grid.
    pub depths: Vec<usize>,
    /// Average out-degrees for `sweep-density`; empty means the built-in grid.
    pub degrees: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { depths: Vec::new(), degrees: Vec::new(), seeds: vec![1, 2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSettings {
    pub instances: usize,
    pub epsilon: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self { instances: 20, epsilon: 1e-5 }
    }
}

/// Contents of a `--config` file (JSON, or TOML when the name ends in `.toml`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Derives every seed of the experiment when set.
    pub seed: Option<u64>,
    pub sweep: SweepSettings,
    pub gradcheck: GradCheckSettings,
}

impl RunConfig {
    /// Experiment with the global seed applied.
    pub fn effective_experiment(&self) -> ExperimentConfig {
        match self.seed {
            Some(s) => self.experiment.with_seed(s),
            None => self.experiment.clone(),
        }
    }
}

/// Parses a structured file by extension: `.toml` as TOML, anything else as JSON.
pub fn read_structured<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// An input file, identified by content so that the run directory does not depend on where it lives.
#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: &'static str,
    pub sha256: String,
}

impl InputFile {
    pub fn new(role: &'static str, path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        Ok(Self { role, sha256: hex(&Sha256::digest(&bytes)) })
    }
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<C: Serialize> {
    pub command: &'static str,
    pub inputs: Vec<InputFile>,
    pub config: C,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A directory named by the first 16 hex digits of the run record's hash.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create<C: Serialize>(root: &Path, record: &RunRecord<C>) -> Result<Self, CliError> {
        let json = serde_json::to_string_pretty(record).map_err(|e| CliError::Validation(e.to_string()))?;
        let name = hex(&Sha256::digest(json.as_bytes()))[..16].to_string();
        let path = root.join(name);
        fs::create_dir_all(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
        let dir = Self { path };
        dir.write("run.json", json + "\n")?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.file(name);
        fs::write(&path, contents).map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(path)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| CliError::Validation(e.to_string()))
}

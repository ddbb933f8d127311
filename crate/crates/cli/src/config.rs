//! Run configuration files, run manifests and exit-code classification.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use rvd_core::env::{EnvConfig, EnvError};
use rvd_core::eval::EvalError;
use rvd_core::policy::PolicyError;
use rvd_core::trainer::{CurriculumSchedule, PpoConfig, TrainError};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

impl Failure {
    pub fn usage(m: impl fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    pub fn data(m: impl fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: m.to_string(),
        }
    }

    pub fn numeric(m: impl fmt::Display) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: m.to_string(),
        }
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(_) | PolicyError::Usage(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(_) => Failure::usage(e),
            _ => Failure::numeric(e),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::usage(e),
            TrainError::Environment(e) => e.into(),
            TrainError::Policy(e) => e.into(),
            TrainError::Io { .. } | TrainError::State(_) => Failure::data(e),
            TrainError::Env { .. } | TrainError::NonFinite { .. } => Failure::numeric(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => Failure::usage(e),
            EvalError::Env(e) => e.into(),
            EvalError::Policy(e) => e.into(),
            EvalError::Io { .. } | EvalError::Format { .. } => Failure::data(e),
            EvalError::Episode { .. } => Failure::numeric(e),
        }
    }
}

/// Contents of a run configuration file. Every section is optional and
/// falls back to the reference values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    /// Defaults to the standard four-stage schedule ending at `env.alpha`.
    pub curriculum: Option<CurriculumSchedule>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.env.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, Failure> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn curriculum(&self) -> CurriculumSchedule {
        self.curriculum
            .clone()
            .unwrap_or_else(|| CurriculumSchedule::standard(self.env.alpha))
    }
}

/// Record of one invocation, written before any long computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: u64,
    /// Fully resolved configuration used by the command.
    pub config: serde_json::Value,
    /// Output role to path.
    pub outputs: BTreeMap<String, PathBuf>,
    pub started_unix_s: u64,
    pub threads: usize,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config).expect("configs serialize"),
            outputs: BTreeMap::new(),
            started_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            threads: rayon::current_num_threads(),
        }
    }

    pub fn output(mut self, role: &str, path: &Path) -> Self {
        self.outputs.insert(role.to_string(), path.to_path_buf());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, &(text + "\n"))
    }
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

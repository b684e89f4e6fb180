//! Config resolution: file, then `--set` overrides, then `--seed`.

use std::fs;
use std::path::{Path, PathBuf};

use sacfl_core::orchestrator::apply_override;
use sacfl_core::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Everything needed to rerun an experiment. Passing a manifest back as
/// `--config` reproduces the run it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: PathBuf,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `sha256:` digest of the snapshot, hashed git-blob style
    /// (`"blob <len>\0"` header followed by the canonical JSON).
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub overrides: Vec<String>,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    pub fn manifest(&self, command: &str, out_dir: &Path, methods: &[String]) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path: self.path.clone(),
            overrides: self.overrides.clone(),
            seed: self.config.seed,
            out_dir: out_dir.to_path_buf(),
            config_hash: config_hash(&self.config),
            methods: methods.to_vec(),
            config: self.config.clone(),
        }
    }
}

pub fn canonical_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let body = canonical_json(cfg);
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    format!("sha256:{}", hex::encode(h.finalize()))
}

fn is_manifest(v: &Value) -> bool {
    v.get("config_hash").is_some() && v.get("config").is_some_and(Value::is_object)
}

pub fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<LoadedConfig> {
    let invalid = |message: String| CliError::InvalidConfig { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.to_path_buf(), source })?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    // Overrides apply to the fully resolved config, so that a `--set` into a
    // section the file leaves at its defaults still sees every field.
    let base: ExperimentConfig = if is_manifest(&root) {
        serde_json::from_value(root["config"].clone()).map_err(|e| invalid(format!("manifest config: {e}")))?
    } else {
        // Deserializing the raw text keeps line numbers in schema errors.
        serde_json::from_str(&text).map_err(|e| invalid(format!("line {}, column {}: {e}", e.line(), e.column())))?
    };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    for o in overrides {
        apply_override(&mut value, o).map_err(|e| invalid(e.to_string()))?;
    }
    if let Some(s) = seed {
        apply_override(&mut value, &format!("seed={s}")).map_err(|e| invalid(e.to_string()))?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| invalid(format!("after overrides: {e}")))?;
    config.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(LoadedConfig { path: path.to_path_buf(), overrides: overrides.to_vec(), config })
}

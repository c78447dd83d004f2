//! Run configuration: defaults, then a TOML file, then `MRT_*` environment
//! variables, then `--set` flags.

use std::path::{Path, PathBuf};

use mrt_core::model::ModelConfig;
use mrt_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "MRT_";
pub const EFFECTIVE_CONFIG_FILE: &str = "config.toml";

/// Everything a training run reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; the `data`, `init` and `sampling` streams derive from it.
    pub seed: u64,
    /// Corpus directory (scene files plus `manifest.json`).
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // bare words that are not valid TOML literals are taken as strings
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let last = last.ok_or_else(|| CliError::Usage(format!("empty config key in '{path}'")))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("'{p}' in '{path}' is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Maps `MRT_TRAIN_MAX_STEPS` to `train.max_steps`, `MRT_SEED` to `seed`.
fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
    for section in ["model", "train"] {
        if let Some(key) = rest.strip_prefix(&format!("{section}_")) {
            return Some(format!("{section}.{key}"));
        }
    }
    Some(rest)
}

impl RunConfig {
    /// Builds the effective configuration. `env` is passed in rather than read
    /// here so callers and tests control it.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        sets: &[String],
    ) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", path.display()))
                })?
                .parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?,
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != "MRT_LOG")
            .collect();
        env.sort();
        for (k, v) in env {
            if let Some(key) = env_key(&k) {
                set_path(&mut table, &key, parse_value(&v))?;
            }
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{s}'")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {e}")))?;
        cfg.train.seed = cfg.seed;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Writes the effective configuration into the output directory.
    pub fn dump(&self) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(EFFECTIVE_CONFIG_FILE);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

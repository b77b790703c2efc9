//! Resolved-config snapshots written beside every command's outputs.

use std::path::Path;

use boulder::learn::train::TrainConfig;
use boulder::EnvConfig;
use serde::{Deserialize, Serialize};

use crate::fault::{io_at, Fault};

pub const FILE_NAME: &str = "resolved_config.toml";

#[derive(Serialize, Deserialize)]
pub struct Snapshot {
    pub command: String,
    pub argv: Vec<String>,
    /// Command flags after defaults were applied.
    pub args: toml::Table,
    pub env: EnvConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train: Option<TrainConfig>,
}

impl Snapshot {
    pub fn new(command: &str, args: &impl Serialize, env: &EnvConfig) -> Result<Self, Fault> {
        let args = toml::Table::try_from(args).map_err(|e| Fault::Usage(format!("arguments: {e}")))?;
        Ok(Self {
            command: command.into(),
            argv: std::env::args().collect(),
            args,
            env: env.clone(),
            train: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), Fault> {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
        let path = dir.join(FILE_NAME);
        let text = toml::to_string_pretty(self).map_err(|e| Fault::Data(format!("snapshot: {e}")))?;
        std::fs::write(&path, text).map_err(io_at(&path))
    }
}

/// Environment config from a plain config file or the `env` table of a snapshot.
pub fn load_env_config(path: Option<&Path>) -> Result<EnvConfig, Fault> {
    let Some(path) = path else {
        return Ok(EnvConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Fault::Data(format!("{}: {e}", path.display())))?;
    let body = match table.get("env") {
        Some(toml::Value::Table(t)) => toml::to_string(t).expect("table serializes"),
        _ => text,
    };
    EnvConfig::from_toml(&body).map_err(|e| Fault::Data(format!("{}: {e}", path.display())))
}

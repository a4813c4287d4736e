use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use xbar_core::tech::ExperimentConfig;
use xbar_core::{Error, Result};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub args: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// Record of a run directory: the config every artifact was made with and
/// the files each command last read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub commands: BTreeMap<String, CommandRecord>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            commands: BTreeMap::new(),
        }
    }

    pub fn load_or_new(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        let path = dir.join(FILE);
        if !path.exists() {
            return Ok(Self::new(config));
        }
        let text = std::fs::read_to_string(&path)?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format { what: "manifest", detail: format!("{}: {e}", path.display()) })?;
        if m.config != *config {
            log::warn!("config differs from the one recorded in {}; updating the snapshot", path.display());
            m.config = config.clone();
            m.seed = config.seed;
        }
        m.code_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    pub fn record(&mut self, command: &str, inputs: Vec<String>, outputs: Vec<String>) {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.commands.insert(
            command.to_string(),
            CommandRecord {
                args: std::env::args().skip(1).collect(),
                timestamp,
                inputs,
                outputs,
            },
        );
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

/// Everything needed to repeat one subcommand. Written before the work
/// starts, so an interrupted run still documents what it was doing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Config,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub encoder_layout: Option<String>,
    pub layout_hash: Option<String>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            encoder_layout: None,
            layout_hash: None,
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        let path = out.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

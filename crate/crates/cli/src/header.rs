//! Reproducibility header written by every command.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const HEADER_NAME: &str = "run-header.json";

#[derive(Clone, Debug, Serialize)]
pub struct RunHeader {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub config: serde_json::Value,
    /// `.flo` files opened during the run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_files_read: Option<u64>,
}

impl RunHeader {
    pub fn new(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        let config = serde_json::to_value(config).context("serialising run configuration")?;
        let canonical = serde_json::to_string(&config)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(Self {
            tool: "deflicker",
            version: deflicker_version(),
            command,
            config_sha256: format!("{digest:x}"),
            seed,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
            flow_files_read: None,
        })
    }

    pub fn with_flow_reads(mut self) -> Self {
        self.flow_files_read = Some(deflicker::flow::flo_files_read());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(HEADER_NAME);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// One-line form for comments in text outputs.
    pub fn summary_line(&self) -> String {
        format!(
            "{} {} {} config_sha256={} seed={} started_unix={}",
            self.tool,
            self.version,
            self.command,
            self.config_sha256,
            self.seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
            self.started_unix
        )
    }
}

pub fn deflicker_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

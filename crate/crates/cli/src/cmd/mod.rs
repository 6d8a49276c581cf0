pub mod eval;
pub mod infer;
pub mod report;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

use crate::usage;

/// Parses a JSON file; unreadable files are I/O errors, bad JSON is a usage error.
pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid {what} {}: {e}", path.display())))
}

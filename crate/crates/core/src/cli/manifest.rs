//! Run manifest: everything needed to repeat a run bitwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ffcore::CHECKPOINT_VERSION;
use crate::metrics::METRICS_FORMAT_VERSION;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub manifest: u32,
    pub metrics: u32,
    pub checkpoint: u32,
}

impl Default for FormatVersions {
    fn default() -> Self {
        Self {
            manifest: MANIFEST_VERSION,
            metrics: METRICS_FORMAT_VERSION,
            checkpoint: CHECKPOINT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub dir: PathBuf,
    pub train_images: usize,
    pub test_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub package_version: String,
    pub formats: FormatVersions,
    pub seed: u64,
    /// Fully resolved run configuration; feed back with `--config`.
    pub config: serde_json::Value,
    #[serde(default)]
    pub data: Option<DataSummary>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            package_version: env!("CARGO_PKG_VERSION").into(),
            formats: FormatVersions::default(),
            seed,
            config: serde_json::to_value(config)?,
            data: None,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

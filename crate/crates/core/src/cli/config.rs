//! Per-verb run configurations.
//!
//! A run is described by a TOML file (or the `manifest.json` of an earlier
//! run) plus command-line overrides; flags win. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bpref::{BpConfig, BpMode, HIDDEN_WIDTH};
use crate::costmeter::{ArchSpec, CostMode};
use crate::data::{DATA_DIR_ENV, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::ffcore::TrainConfig;

use super::manifest::Manifest;

pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// Dataset root. Falls back to `$FFINT8_MNIST_DIR`, then `data/mnist`.
    pub dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl DataOptions {
    pub fn resolved_dir(&self) -> PathBuf {
        self.dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfMode {
    Lookahead,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFfRun {
    pub out: PathBuf,
    pub mode: FfMode,
    /// Input and hidden widths, e.g. `784-500-500`.
    pub arch: String,
    pub normalize_hidden_inputs: bool,
    pub data: DataOptions,
    pub train: TrainConfig,
}

impl Default for TrainFfRun {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/train-ff"),
            mode: FfMode::Lookahead,
            arch: "784-500-500".into(),
            normalize_hidden_inputs: true,
            data: DataOptions::default(),
            train: TrainConfig::default(),
        }
    }
}

impl TrainFfRun {
    pub fn widths(&self) -> Result<Vec<usize>> {
        let w = ArchSpec::parse_widths(&self.arch)?;
        if w[0] <= NUM_CLASSES {
            return Err(Error::Config(format!("input width {} leaves no room for the label", w[0])));
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.widths()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBpRun {
    pub out: PathBuf,
    pub mode: BpMode,
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub data: DataOptions,
    pub train: BpConfig,
}

impl Default for TrainBpRun {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/train-bp"),
            mode: BpMode::Fp32,
            depth: 2,
            width: HIDDEN_WIDTH,
            data: DataOptions::default(),
            train: BpConfig::default(),
        }
    }
}

impl TrainBpRun {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSweepRun {
    pub out: PathBuf,
    pub depths: Vec<usize>,
    pub data: DataOptions,
    pub train: BpConfig,
}

impl Default for DepthSweepRun {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/depth-sweep"),
            depths: vec![0, 1, 2, 3],
            data: DataOptions::default(),
            train: BpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradHistRun {
    pub out: PathBuf,
    pub depths: Vec<usize>,
    pub layer: usize,
    pub bins: usize,
    /// FP32 training given to each fresh model before the histogram pass.
    pub warmup: BpConfig,
    pub data: DataOptions,
}

impl Default for GradHistRun {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/grad-hist"),
            depths: vec![0, 1, 2, 3],
            layer: 0,
            bins: crate::bpref::HISTOGRAM_BINS,
            warmup: BpConfig {
                epochs: 1,
                ..BpConfig::default()
            },
            data: DataOptions::default(),
        }
    }
}

impl GradHistRun {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() {
            return Err(Error::Config("no models to histogram: depth list is empty".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        if let Some(&d) = self.depths.iter().find(|&&d| self.layer > d) {
            return Err(Error::Config(format!("layer {} does not exist at depth {d}", self.layer)));
        }
        self.warmup.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountOpsRun {
    pub out: PathBuf,
    /// Full layer stack shared by every mode, ending in the class count,
    /// e.g. `784-500-500-500-10`.
    pub arch: String,
    pub batch: usize,
    pub modes: Vec<CostMode>,
    /// FF modes: count the look-ahead chain (active whenever λ > 0).
    pub lookahead_chain: bool,
    /// Also run one real training step per mode and compare.
    pub instrumented: bool,
    pub seed: u64,
}

impl Default for CountOpsRun {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/count-ops"),
            arch: "784-500-500-500-10".into(),
            batch: 10,
            modes: vec![CostMode::FfInt8, CostMode::BpFp32],
            lookahead_chain: true,
            instrumented: false,
            seed: 0,
        }
    }
}

impl CountOpsRun {
    pub fn widths(&self) -> Result<Vec<usize>> {
        let w = ArchSpec::parse_widths(&self.arch)?;
        if w[0] <= NUM_CLASSES {
            return Err(Error::Config(format!("input width {} leaves no room for the label", w[0])));
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.widths()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no cost modes selected".into()));
        }
        let bp = self.modes.iter().any(|m| matches!(m, CostMode::BpFp32 | CostMode::BpInt8));
        if bp && w.last() != Some(&NUM_CLASSES) {
            return Err(Error::Config(format!(
                "backprop modes need an architecture ending in {NUM_CLASSES} classes"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    pub checkpoint: PathBuf,
    /// Falls back to the producing run's data options when unset.
    pub data: Option<DataOptions>,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("runs/train-ff/model.ckpt"),
            data: None,
        }
    }
}

/// Reads a run configuration from TOML, or from an earlier run's
/// `manifest.json` (which must have been written by `command`).
pub fn load_run<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(Error::Config(format!(
                "{} was written by '{}', not '{command}'",
                path.display(),
                m.command
            )));
        }
        return serde_json::from_value(m.config)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
    }
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let run = TrainFfRun::default();
        let text = toml::to_string(&run).unwrap();
        assert_eq!(toml::from_str::<TrainFfRun>(&text).unwrap(), run);
        let run = CountOpsRun::default();
        assert_eq!(toml::from_str::<CountOpsRun>(&toml::to_string(&run).unwrap()).unwrap(), run);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainFfRun>("arhc = \"784-500\"").is_err());
        assert!(toml::from_str::<TrainFfRun>("[train]\nthetta = 1.0").is_err());
        assert!(toml::from_str::<DepthSweepRun>("[data]\nroot = \"x\"").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let run: TrainFfRun = toml::from_str("mode = \"vanilla\"\n[train]\nepochs = 3").unwrap();
        assert_eq!(run.mode, FfMode::Vanilla);
        assert_eq!(run.train.epochs, 3);
        assert_eq!(run.train.theta, 2.0);
    }

    #[test]
    fn validation() {
        let mut run = TrainFfRun::default();
        run.arch = "784-x-500".into();
        assert!(run.validate().is_err());
        run.arch = "8-500".into();
        assert!(run.validate().is_err());
        let mut hist = GradHistRun::default();
        hist.depths.clear();
        assert!(hist.validate().is_err());
        let hist = GradHistRun {
            layer: 2,
            depths: vec![1],
            ..GradHistRun::default()
        };
        assert!(hist.validate().is_err());
        let ops = CountOpsRun {
            arch: "784-500-500".into(),
            ..CountOpsRun::default()
        };
        assert!(ops.validate().is_err());
        assert!(CountOpsRun::default().validate().is_ok());
    }
}

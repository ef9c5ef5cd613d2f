//! The `ffint8` command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 data or checkpoint error, 4 non-finite value during training.

mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::bpref::{BpMode, GradientRounding};
use crate::costmeter::CostMode;
use crate::error::Error;
use crate::ffcore::{LookaheadMode, Precision, WeightRounding};

pub use commands::{
    instrumented_step, EvalOutcome, CHECKPOINT_FILE, COST_FILE, HISTOGRAM_FILE, KURTOSIS_FILE, SWEEP_FILE,
};
pub use config::{
    load_run, CountOpsRun, DataOptions, DepthSweepRun, EvalRun, FfMode, GradHistRun, TrainBpRun, TrainFfRun,
    DEFAULT_DATA_DIR,
};
pub use manifest::{DataSummary, FormatVersions, Manifest, MANIFEST_FILE, MANIFEST_VERSION};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::OverflowRisk { .. } | Error::IndexOutOfRange { .. } => EXIT_CONFIG,
            Error::BadMagic { .. }
            | Error::CountMismatch { .. }
            | Error::TruncatedFile { .. }
            | Error::LabelOutOfRange(_)
            | Error::Checkpoint(_) => EXIT_DATA,
            Error::Numeric(_) | Error::InvalidTensor(_) | Error::InvalidScale(_) => EXIT_NUMERIC,
            Error::Shape(_) | Error::StaleForward | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_OTHER,
        };
        CliError::new(code, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ffint8", version, about = "INT8 Forward-Forward training and backprop baselines on MNIST")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a Forward-Forward network (look-ahead or greedy).
    TrainFf(TrainFfArgs),
    /// Train a backprop MLP in FP32 or with INT8-quantized gradients.
    TrainBp(TrainBpArgs),
    /// FP32 vs INT8-gradient backprop accuracy across hidden-layer counts.
    DepthSweep(DepthSweepArgs),
    /// First-layer gradient histograms and kurtosis per depth.
    GradHist(GradHistArgs),
    /// Analytic (and optionally measured) operation counts per training step.
    CountOps(CountOpsArgs),
    /// Test accuracy of a saved checkpoint.
    Eval(EvalArgs),
}

fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value '{s}'"))
}

/// Comma-separated flag value; an empty string is an empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

fn list_arg(s: &str) -> Result<List<usize>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| format!("'{p}' is not a non-negative integer")))
        .collect::<Result<_, _>>()
        .map(List)
}

fn modes_arg(s: &str) -> Result<List<CostMode>, String> {
    s.split(',')
        .map(|m| m.trim().parse().map_err(|e: Error| e.to_string()))
        .collect::<Result<_, _>>()
        .map(List)
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// TOML run configuration, or an earlier run's manifest.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Dataset root; overrides $FFINT8_MNIST_DIR and the config file.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
}

impl DataArgs {
    fn apply(&self, d: &mut DataOptions) {
        if self.data_dir.is_some() {
            d.dir.clone_from(&self.data_dir);
        }
        if self.train_limit.is_some() {
            d.train_limit = self.train_limit;
        }
        if self.test_limit.is_some() {
            d.test_limit = self.test_limit;
        }
    }
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value.clone() {
            $target = v;
        }
    };
}

#[derive(Args, Debug, Default)]
pub struct TrainFfArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// lookahead | vanilla
    #[arg(long, value_parser = enum_arg::<FfMode>)]
    pub mode: Option<FfMode>,
    /// int8 | fp32
    #[arg(long, value_parser = enum_arg::<Precision>)]
    pub precision: Option<Precision>,
    /// chained | detached
    #[arg(long, value_parser = enum_arg::<LookaheadMode>)]
    pub lookahead_mode: Option<LookaheadMode>,
    /// nearest | stochastic
    #[arg(long, value_parser = enum_arg::<WeightRounding>)]
    pub weight_rounding: Option<WeightRounding>,
    /// Input and hidden widths, e.g. 784-500-500.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub lambda_step: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub skip_first_layer: bool,
    /// Record real epoch durations (metrics are then no longer bitwise reproducible).
    #[arg(long)]
    pub wall_time: bool,
}

impl TrainFfArgs {
    pub fn resolve(&self) -> CliResult<TrainFfRun> {
        let mut run: TrainFfRun = load_run(self.common.config.as_deref(), "train-ff")?;
        set!(run.out, self.common.out);
        self.data.apply(&mut run.data);
        set!(run.mode, self.mode);
        set!(run.arch, self.arch);
        let t = &mut run.train;
        set!(t.precision, self.precision);
        set!(t.lookahead_mode, self.lookahead_mode);
        set!(t.weight_rounding, self.weight_rounding);
        set!(t.epochs, self.epochs);
        set!(t.batch_size, self.batch_size);
        set!(t.learning_rate, self.lr);
        set!(t.theta, self.theta);
        set!(t.lambda0, self.lambda0);
        set!(t.lambda_step, self.lambda_step);
        set!(t.seed, self.seed);
        if self.lambda_max.is_some() {
            t.lambda_max = self.lambda_max;
        }
        t.goodness_skip_first_layer |= self.skip_first_layer;
        t.record_wall_time |= self.wall_time;
        run.validate()?;
        Ok(run)
    }
}

#[derive(Args, Debug, Default)]
pub struct BpArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// INT8 gradient rounding: stochastic | nearest
    #[arg(long, value_parser = enum_arg::<GradientRounding>)]
    pub gradient_rounding: Option<GradientRounding>,
    #[arg(long)]
    pub wall_time: bool,
}

impl BpArgs {
    fn apply(&self, c: &mut crate::bpref::BpConfig) {
        set!(c.epochs, self.epochs);
        set!(c.batch_size, self.batch_size);
        set!(c.learning_rate, self.lr);
        set!(c.seed, self.seed);
        set!(c.gradient_rounding, self.gradient_rounding);
        c.record_wall_time |= self.wall_time;
    }
}

#[derive(Args, Debug, Default)]
pub struct TrainBpArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bp: BpArgs,
    /// fp32 | int8_naive
    #[arg(long)]
    pub mode: Option<BpMode>,
    /// Number of hidden layers.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

impl TrainBpArgs {
    pub fn resolve(&self) -> CliResult<TrainBpRun> {
        let mut run: TrainBpRun = load_run(self.common.config.as_deref(), "train-bp")?;
        set!(run.out, self.common.out);
        self.data.apply(&mut run.data);
        self.bp.apply(&mut run.train);
        set!(run.mode, self.mode);
        set!(run.depth, self.depth);
        set!(run.width, self.width);
        run.validate()?;
        Ok(run)
    }
}

#[derive(Args, Debug, Default)]
pub struct DepthSweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bp: BpArgs,
    /// Comma-separated hidden-layer counts, e.g. 0,1,2,3.
    #[arg(long, value_parser = list_arg)]
    pub depths: Option<List<usize>>,
}

impl DepthSweepArgs {
    pub fn resolve(&self) -> CliResult<DepthSweepRun> {
        let mut run: DepthSweepRun = load_run(self.common.config.as_deref(), "depth-sweep")?;
        set!(run.out, self.common.out);
        self.data.apply(&mut run.data);
        self.bp.apply(&mut run.train);
        set!(run.depths, self.depths.as_ref().map(|l| l.0.clone()));
        run.train.validate()?;
        Ok(run)
    }
}

#[derive(Args, Debug, Default)]
pub struct GradHistArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// FP32 warm-up training applied before each histogram.
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long, value_parser = list_arg)]
    pub depths: Option<List<usize>>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
}

impl GradHistArgs {
    pub fn resolve(&self) -> CliResult<GradHistRun> {
        let mut run: GradHistRun = load_run(self.common.config.as_deref(), "grad-hist")?;
        set!(run.out, self.common.out);
        self.data.apply(&mut run.data);
        self.bp.apply(&mut run.warmup);
        set!(run.depths, self.depths.as_ref().map(|l| l.0.clone()));
        set!(run.layer, self.layer);
        set!(run.bins, self.bins);
        run.validate()?;
        Ok(run)
    }
}

#[derive(Args, Debug, Default)]
pub struct CountOpsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Layer widths shared by every mode, e.g. 784-500-500-500-10.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Comma-separated subset of ff_int8, ff_fp32, bp_fp32, bp_int8.
    #[arg(long, value_parser = modes_arg)]
    pub modes: Option<List<CostMode>>,
    /// Cost FF without the look-ahead chain.
    #[arg(long)]
    pub no_chain: bool,
    /// Also run one real training step per mode and require equal counts.
    #[arg(long)]
    pub instrumented: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CountOpsArgs {
    pub fn resolve(&self) -> CliResult<CountOpsRun> {
        let mut run: CountOpsRun = load_run(self.common.config.as_deref(), "count-ops")?;
        set!(run.out, self.common.out);
        set!(run.arch, self.arch);
        set!(run.batch, self.batch);
        set!(run.modes, self.modes.as_ref().map(|l| l.0.clone()));
        set!(run.seed, self.seed);
        run.lookahead_chain &= !self.no_chain;
        run.instrumented |= self.instrumented;
        run.validate()?;
        Ok(run)
    }
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

impl EvalArgs {
    pub fn resolve(&self) -> CliResult<EvalRun> {
        let mut run: EvalRun = load_run(self.config.as_deref(), "eval")?;
        set!(run.checkpoint, self.checkpoint);
        if self.data.data_dir.is_some() || self.data.train_limit.is_some() || self.data.test_limit.is_some() {
            let mut d = run.data.take().unwrap_or_default();
            self.data.apply(&mut d);
            run.data = Some(d);
        }
        Ok(run)
    }
}

/// Runs one parsed command.
pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::TrainFf(a) => commands::train_ff(&a.resolve()?),
        Command::TrainBp(a) => commands::train_bp_cmd(&a.resolve()?),
        Command::DepthSweep(a) => commands::depth_sweep_cmd(&a.resolve()?),
        Command::GradHist(a) => commands::grad_hist(&a.resolve()?),
        Command::CountOps(a) => commands::count_ops(&a.resolve()?),
        Command::Eval(a) => {
            let out = commands::eval(&a.resolve()?)?;
            println!("accuracy {} over {} test images", out.accuracy, out.images);
            Ok(())
        }
    }
}

pub use commands::eval as run_eval;

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

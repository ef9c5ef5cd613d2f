use std::ops::ControlFlow;
use std::path::Path;

use rand::Rng;

use crate::bpref::{depth_sweep, gradient_histogram, sweep_csv, train_bp, BPModel, BpConfig, BpMode};
use crate::costmeter::{analytic_counts, cost_report, ArchSpec, CostMode, OpCounters, OpCounts};
use crate::data::{load_split, Dataset, LabeledImage, Split, NUM_CLASSES};
use crate::error::Error;
use crate::ffcore::{
    evaluate, load_checkpoint, save_checkpoint, train_ff_lookahead, train_ff_vanilla, Checkpoint, FFModel,
    LookaheadMode, ModelKind, Precision, TrainConfig,
};
use crate::metrics::MetricsLog;
use crate::rng::seeded_rng;

use super::config::{
    CountOpsRun, DataOptions, DepthSweepRun, EvalRun, FfMode, GradHistRun, TrainBpRun, TrainFfRun,
};
use super::manifest::{DataSummary, Manifest};
use super::{CliError, CliResult, EXIT_DATA};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SWEEP_FILE: &str = "depth_sweep.csv";
pub const HISTOGRAM_FILE: &str = "grad_hist.csv";
pub const KURTOSIS_FILE: &str = "kurtosis.csv";
pub const COST_FILE: &str = "cost.csv";

const PURPOSE_INIT: u64 = 0;
const PURPOSE_SYNTHETIC: u64 = 7;

fn data_error(e: Error) -> CliError {
    CliError::new(EXIT_DATA, e.to_string())
}

fn load_data(opts: &DataOptions) -> CliResult<(Dataset, DataSummary)> {
    let dir = opts.resolved_dir();
    let mut train = load_split(&dir, Split::Train).map_err(data_error)?;
    let mut test = load_split(&dir, Split::Test).map_err(data_error)?;
    if let Some(n) = opts.train_limit {
        train.truncate(n);
    }
    if let Some(n) = opts.test_limit {
        test.truncate(n);
    }
    if train.is_empty() {
        return Err(CliError::new(EXIT_DATA, format!("{}: no training images", dir.display())));
    }
    let summary = DataSummary {
        dir,
        train_images: train.len(),
        test_images: test.len(),
    };
    Ok((Dataset { train, test }, summary))
}

fn check_width(data: &Dataset, width: usize) -> CliResult<()> {
    match data.train.first() {
        Some(img) if img.pixels.len() != width => Err(CliError::new(
            EXIT_DATA,
            format!("images have {} pixels, model expects {width}", img.pixels.len()),
        )),
        _ => Ok(()),
    }
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::new(1, format!("{}: {e}", dir.display())))
}

fn progress(tag: &'static str) -> impl FnMut(&MetricsLog) -> ControlFlow<()> {
    move |log: &MetricsLog| {
        if let Some(r) = log.rows.last() {
            eprintln!(
                "{tag} epoch {:>4} {:<5} acc {:.4} loss {:.4}/{:.4} lambda {:.3}",
                r.epoch, r.split, r.accuracy, r.mean_loss_pos, r.mean_loss_neg, r.lambda
            );
        }
        ControlFlow::Continue(())
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    std::fs::write(dir.join(name), text).map_err(|e| CliError::new(1, format!("{name}: {e}")))
}

pub fn train_ff(run: &TrainFfRun) -> CliResult<()> {
    run.validate()?;
    let widths = run.widths()?;
    let (data, summary) = load_data(&run.data)?;
    check_width(&data, widths[0])?;
    create_out(&run.out)?;
    let mut model = FFModel::new(&widths, run.normalize_hidden_inputs, &mut seeded_rng(run.train.seed, PURPOSE_INIT))?;
    let counters = OpCounters::new();
    let mut observer = progress("ff");
    let log = match run.mode {
        FfMode::Lookahead => train_ff_lookahead(&mut model, &data, &run.train, &counters, &mut observer)?,
        FfMode::Vanilla => train_ff_vanilla(&mut model, &data, &run.train, &counters, &mut observer)?,
    };
    log.write(&run.out)?;
    let ckpt = Checkpoint {
        kind: ModelKind::Ff,
        layers: model.layers().to_vec(),
        config: serde_json::to_value(run).map_err(Error::from)?,
    };
    save_checkpoint(&run.out.join(CHECKPOINT_FILE), &ckpt)?;
    let mut manifest = Manifest::new("train-ff", run.train.seed, run)?;
    manifest.data = Some(summary);
    manifest.outputs = vec!["metrics.csv".into(), "counters.csv".into(), CHECKPOINT_FILE.into()];
    manifest.write(&run.out)?;
    if let Some(r) = log.test_rows().last() {
        println!("final test accuracy {}", r.accuracy);
    }
    Ok(())
}

pub fn train_bp_cmd(run: &TrainBpRun) -> CliResult<()> {
    run.validate()?;
    let (data, summary) = load_data(&run.data)?;
    create_out(&run.out)?;
    let input = data.train[0].pixels.len();
    let mut model = BPModel::new(input, &vec![run.width; run.depth], &mut seeded_rng(run.train.seed, PURPOSE_INIT))?;
    let counters = OpCounters::new();
    let log = train_bp(&mut model, &data, &run.train, run.mode, &counters, &mut progress("bp"))?;
    log.write(&run.out)?;
    let ckpt = Checkpoint {
        kind: ModelKind::Bp,
        layers: model.into_layers(),
        config: serde_json::to_value(run).map_err(Error::from)?,
    };
    save_checkpoint(&run.out.join(CHECKPOINT_FILE), &ckpt)?;
    let mut manifest = Manifest::new("train-bp", run.train.seed, run)?;
    manifest.data = Some(summary);
    manifest.outputs = vec!["metrics.csv".into(), "counters.csv".into(), CHECKPOINT_FILE.into()];
    manifest.write(&run.out)?;
    if let Some(r) = log.test_rows().last() {
        println!("final test accuracy {}", r.accuracy);
    }
    Ok(())
}

pub fn depth_sweep_cmd(run: &DepthSweepRun) -> CliResult<()> {
    run.train.validate()?;
    let (data, summary) = load_data(&run.data)?;
    create_out(&run.out)?;
    let rows = depth_sweep(&run.depths, &data, &run.train, |r| {
        eprintln!(
            "depth {} fp32 {:.2}% int8 {:.2}% diff {:+.2}",
            r.depth,
            100.0 * r.acc_fp32,
            100.0 * r.acc_int8,
            r.diff()
        )
    })?;
    let csv = sweep_csv(&rows);
    write_text(&run.out, SWEEP_FILE, &csv)?;
    let mut manifest = Manifest::new("depth-sweep", run.train.seed, run)?;
    manifest.data = Some(summary);
    manifest.outputs = vec![SWEEP_FILE.into()];
    manifest.write(&run.out)?;
    print!("{csv}");
    Ok(())
}

pub fn grad_hist(run: &GradHistRun) -> CliResult<()> {
    run.validate()?;
    let (data, summary) = load_data(&run.data)?;
    create_out(&run.out)?;
    let input = data.train[0].pixels.len();
    let mut hist_csv = String::from("depth,bin_lo,bin_hi,count\n");
    let mut kurt_csv = String::from("depth,elements,mean,variance,excess_kurtosis,min,max\n");
    for &depth in &run.depths {
        let mut model = BPModel::new(
            input,
            &vec![crate::bpref::HIDDEN_WIDTH; depth],
            &mut seeded_rng(run.warmup.seed, depth as u64),
        )?;
        train_bp(&mut model, &data, &run.warmup, BpMode::Fp32, &OpCounters::new(), &mut ())?;
        let h = gradient_histogram(&model, &data.train, run.warmup.batch_size, run.layer, run.bins)?;
        hist_csv.push_str(&h.csv_rows(&depth.to_string()));
        kurt_csv.push_str(&format!(
            "{depth},{},{},{},{},{},{}\n",
            h.total(),
            h.mean,
            h.variance,
            h.excess_kurtosis,
            h.min,
            h.max
        ));
        println!("depth {depth}: excess kurtosis {:.4} over {} elements", h.excess_kurtosis, h.total());
    }
    write_text(&run.out, HISTOGRAM_FILE, &hist_csv)?;
    write_text(&run.out, KURTOSIS_FILE, &kurt_csv)?;
    let mut manifest = Manifest::new("grad-hist", run.warmup.seed, run)?;
    manifest.data = Some(summary);
    manifest.outputs = vec![HISTOGRAM_FILE.into(), KURTOSIS_FILE.into()];
    manifest.write(&run.out)?;
    Ok(())
}

fn synthetic(n: usize, width: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = seeded_rng(seed, PURPOSE_SYNTHETIC);
    (0..n)
        .map(|i| LabeledImage {
            pixels: (0..width).map(|_| rng.random::<f32>()).collect(),
            label: (i % NUM_CLASSES) as u8,
        })
        .collect()
}

/// Counters of one real training step of `mode` on synthetic data.
pub fn instrumented_step(widths: &[usize], batch: usize, mode: CostMode, chain: bool, seed: u64) -> crate::Result<OpCounts> {
    let data = Dataset {
        train: synthetic(batch, widths[0], seed),
        test: Vec::new(),
    };
    let counters = OpCounters::new();
    let log = match mode {
        CostMode::FfInt8 | CostMode::FfFp32 => {
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: batch,
                precision: if mode == CostMode::FfInt8 { Precision::Int8 } else { Precision::Fp32 },
                lookahead_mode: LookaheadMode::Chained,
                lambda0: if chain { 0.001 } else { 0.0 },
                seed,
                ..TrainConfig::default()
            };
            let mut model = FFModel::new(widths, true, &mut seeded_rng(seed, PURPOSE_INIT))?;
            train_ff_lookahead(&mut model, &data, &cfg, &counters, &mut ())?
        }
        CostMode::BpFp32 | CostMode::BpInt8 => {
            let cfg = BpConfig {
                epochs: 1,
                batch_size: batch,
                seed,
                ..BpConfig::default()
            };
            let bp_mode = if mode == CostMode::BpInt8 { BpMode::Int8Naive } else { BpMode::Fp32 };
            let hidden = &widths[1..widths.len() - 1];
            let mut model = BPModel::new(widths[0], hidden, &mut seeded_rng(seed, PURPOSE_INIT))?;
            train_bp(&mut model, &data, &cfg, bp_mode, &counters, &mut ())?
        }
    };
    Ok(log.rows[0].counters)
}

pub fn count_ops(run: &CountOpsRun) -> CliResult<()> {
    run.validate()?;
    let widths = run.widths()?;
    let mut rows = Vec::new();
    let mut mismatch = Vec::new();
    for &mode in &run.modes {
        let spec = ArchSpec::new(widths.clone(), run.batch, mode).with_chain(run.lookahead_chain);
        let analytic = analytic_counts(&spec)?;
        if run.instrumented {
            let measured = instrumented_step(&widths, run.batch, mode, run.lookahead_chain, run.seed)?;
            if measured != analytic {
                mismatch.push(format!("{mode}: analytic {analytic:?} vs instrumented {measured:?}"));
            }
            rows.push((format!("{mode}_instrumented"), measured));
        }
        rows.push((mode.name().to_string(), analytic));
    }
    // Analytic rows first so the ratio compares the closed-form counts.
    rows.sort_by_key(|(m, _)| m.ends_with("_instrumented"));
    let report = cost_report(&rows);
    create_out(&run.out)?;
    write_text(&run.out, COST_FILE, &report.to_csv())?;
    let mut manifest = Manifest::new("count-ops", run.seed, run)?;
    manifest.outputs = vec![COST_FILE.into()];
    manifest.write(&run.out)?;
    print!("{}", report.to_text());
    if !mismatch.is_empty() {
        return Err(CliError::new(1, format!("instrumented counts differ: {}", mismatch.join("; "))));
    }
    if run.instrumented {
        println!("instrumented counts equal analytic counts");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub kind: ModelKind,
    pub accuracy: f64,
    pub images: usize,
}

pub fn eval(run: &EvalRun) -> CliResult<EvalOutcome> {
    let ckpt = load_checkpoint(&run.checkpoint).map_err(|e| match e {
        Error::Io(io) => CliError::new(EXIT_DATA, format!("{}: {io}", run.checkpoint.display())),
        other => data_error(other),
    })?;
    let opts = match &run.data {
        Some(d) => d.clone(),
        None => serde_json::from_value(ckpt.config.get("data").cloned().unwrap_or_default()).unwrap_or_default(),
    };
    let dir = opts.resolved_dir();
    let mut test = load_split(&dir, Split::Test).map_err(data_error)?;
    if let Some(n) = opts.test_limit {
        test.truncate(n);
    }
    let width = ckpt.layers.first().map_or(0, |l| l.fan_in());
    if let Some(img) = test.first() {
        if img.pixels.len() != width {
            return Err(CliError::new(
                EXIT_DATA,
                format!("images have {} pixels, checkpoint expects {width}", img.pixels.len()),
            ));
        }
    }
    let counters = OpCounters::new();
    let accuracy = match ckpt.kind {
        ModelKind::Ff => {
            let cfg: TrainConfig = match ckpt.config.get("train") {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| CliError::new(EXIT_DATA, format!("checkpoint config: {e}")))?,
                None => TrainConfig::default(),
            };
            let model = FFModel::from_layers(ckpt.layers).map_err(data_error)?;
            evaluate(&model, &test, &cfg, &counters)?.accuracy
        }
        ModelKind::Bp => {
            let model = BPModel::from_layers(ckpt.layers).map_err(data_error)?;
            model.accuracy(&test, &counters)?.0
        }
    };
    Ok(EvalOutcome {
        kind: ckpt.kind,
        accuracy,
        images: test.len(),
    })
}


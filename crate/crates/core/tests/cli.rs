//! End-to-end runs of the `ffint8` binary on a small synthetic IDX dataset.

use std::path::Path;
use std::process::{Command, Output};

use ffint8::cli::{Manifest, MANIFEST_FILE};
use ffint8::ffcore::load_checkpoint;
use ffint8::data::{encode_idx_images, encode_idx_labels, LabeledImage, DATA_DIR_ENV};
use ffint8::metrics::{MetricsLog, METRICS_HEADER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SIDE: usize = 6;

fn images(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 10) as u8;
            let mut pixels: Vec<f32> = (0..SIDE * SIDE).map(|_| rng.random_range(0.0..0.2)).collect();
            for j in 0..3 {
                pixels[10 + 2 * label as usize + j] = 1.0;
            }
            LabeledImage { pixels, label }
        })
        .collect()
}

fn dataset() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, bytes: Vec<u8>| std::fs::write(dir.path().join(name), bytes).unwrap();
    let train = images(200, 1);
    let test = images(60, 2);
    write("train-images-idx3-ubyte", encode_idx_images(&train, SIDE, SIDE));
    write("train-labels-idx1-ubyte", encode_idx_labels(&train));
    write("t10k-images-idx3-ubyte", encode_idx_images(&test, SIDE, SIDE));
    write("t10k-labels-idx1-ubyte", encode_idx_labels(&test));
    dir
}

fn ffint8(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffint8"))
        .args(args)
        .env(DATA_DIR_ENV, data)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn train_ff(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train-ff", "--out", path(out), "--arch", "36-24-24", "--epochs", "3", "--lr", "0.05"];
    args.extend_from_slice(extra);
    ffint8(data, &args)
}

#[test]
fn train_ff_writes_metrics_checkpoint_and_manifest() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("ff");
    ok(train_ff(data.path(), &out, &[]));

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    let log = MetricsLog::from_csv(&csv).unwrap();
    assert_eq!(log.test_rows().count(), 3);
    assert!(log.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy) && r.wall_ms == 0));
    assert!(out.join("counters.csv").exists());

    let m = manifest(&out);
    assert_eq!(m.command, "train-ff");
    assert_eq!(m.config["train"]["theta"], 2.0);
    assert_eq!(m.config["train"]["lambda_step"], 0.001);
    assert_eq!(m.config["train"]["batch_size"], 32);
    assert_eq!(m.seed, 0);
    assert_eq!(m.formats.metrics, 1);
    assert_eq!(m.data.as_ref().unwrap().train_images, 200);

    // Same code path as the final test row.
    let eval = ok(ffint8(data.path(), &["eval", "--checkpoint", path(&out.join("model.ckpt"))]));
    let text = String::from_utf8(eval.stdout).unwrap();
    let acc: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let last = log.test_rows().last().unwrap().accuracy;
    assert!((acc - last).abs() <= 1e-9, "{acc} vs {last}");
}

#[test]
fn rerun_from_manifest_is_bitwise_identical() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let a = work.path().join("a");
    let b = work.path().join("b");
    ok(train_ff(data.path(), &a, &["--mode", "vanilla", "--seed", "9", "--precision", "int8"]));
    let m = a.join(MANIFEST_FILE);
    ok(ffint8(data.path(), &["train-ff", "--config", path(&m), "--out", path(&b)]));
    for f in ["metrics.csv", "counters.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let weights = |d: &Path| load_checkpoint(&d.join("model.ckpt")).unwrap().layers;
    assert_eq!(weights(&a), weights(&b));
    assert_eq!(manifest(&b).config["mode"], "vanilla");
    assert_eq!(manifest(&b).seed, 9);
}

#[test]
fn train_bp_round_trip_and_rerun() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let a = work.path().join("a");
    let b = work.path().join("b");
    let args = ["train-bp", "--out", path(&a), "--depth", "1", "--width", "16", "--epochs", "2", "--mode", "int8_naive"];
    ok(ffint8(data.path(), &args));
    let m = manifest(&a);
    assert_eq!(m.command, "train-bp");
    assert_eq!(m.config["mode"], "int8_naive");
    ok(ffint8(data.path(), &["train-bp", "--config", path(&a.join(MANIFEST_FILE)), "--out", path(&b)]));
    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(b.join("metrics.csv")).unwrap());

    let log = MetricsLog::from_csv(&csv).unwrap();
    let eval = ok(ffint8(data.path(), &["eval", "--checkpoint", path(&a.join("model.ckpt"))]));
    let acc: f64 = String::from_utf8(eval.stdout).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((acc - log.test_rows().last().unwrap().accuracy).abs() <= 1e-9);
}

#[test]
fn toml_config_with_flag_override() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("run.toml");
    let out = work.path().join("run");
    std::fs::write(
        &cfg,
        format!("out = {:?}\narch = \"36-20\"\n[train]\nepochs = 5\ntheta = 3.0\n", path(&out)),
    )
    .unwrap();
    ok(ffint8(data.path(), &["train-ff", "--config", path(&cfg), "--epochs", "1"]));
    let m = manifest(&out);
    assert_eq!(m.config["train"]["epochs"], 1);
    assert_eq!(m.config["train"]["theta"], 3.0);
    assert_eq!(m.config["arch"], "36-20");

    std::fs::write(&cfg, "[train]\nepoch = 5\n").unwrap();
    assert_eq!(code(&ffint8(data.path(), &["train-ff", "--config", path(&cfg)])), 2);
}

#[test]
fn exit_codes() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("x");
    let missing = work.path().join("nothing.ckpt");
    assert_eq!(code(&ffint8(data.path(), &["eval", "--checkpoint", path(&missing)])), 3);
    std::fs::write(&missing, b"not a checkpoint").unwrap();
    assert_eq!(code(&ffint8(data.path(), &["eval", "--checkpoint", path(&missing)])), 3);
    assert_eq!(code(&ffint8(work.path(), &["train-ff", "--out", path(&out), "--arch", "36-8"])), 3);
    assert_eq!(code(&train_ff(data.path(), &out, &["--arch", "36-8"])), 2);
    assert_eq!(code(&train_ff(data.path(), &out, &["--theta", "-1"])), 2);
    let arch = |a: &str| code(&ffint8(data.path(), &["train-ff", "--out", path(&out), "--arch", a]));
    assert_eq!(arch("36-0-5"), 2);
    assert_eq!(arch("36"), 2);
    assert_eq!(arch("784-50"), 3);
    assert_eq!(code(&ffint8(data.path(), &["train-ff", "--out", path(&out), "--arch", "36-8", "--lr", "1e38"])), 4);
    assert_eq!(code(&ffint8(data.path(), &["grad-hist", "--out", path(&out), "--depths", ""])), 2);
    assert_eq!(code(&ffint8(data.path(), &["count-ops", "--out", path(&out), "--arch", "784-five-10"])), 2);
    assert_eq!(code(&ffint8(data.path(), &["train-bp", "--mode", "int4"])), 2);
}

#[test]
fn depth_sweep_and_empty_sweep() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("sweep");
    ok(ffint8(data.path(), &["depth-sweep", "--out", path(&out), "--depths", "", "--epochs", "1"]));
    assert_eq!(std::fs::read_to_string(out.join("depth_sweep.csv")).unwrap(), "depth,acc_fp32,acc_int8,diff\n");
    ok(ffint8(data.path(), &["depth-sweep", "--out", path(&out), "--depths", "0,1", "--epochs", "1"]));
    let csv = std::fs::read_to_string(out.join("depth_sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0,") && rows[1].starts_with("1,"));
    assert_eq!(manifest(&out).config["depths"], serde_json::json!([0, 1]));
}

#[test]
fn grad_hist_conserves_counts() {
    let data = dataset();
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("hist");
    ok(ffint8(data.path(), &["grad-hist", "--out", path(&out), "--depths", "0,2", "--bins", "11", "--batch-size", "50"]));
    let csv = std::fs::read_to_string(out.join("grad_hist.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "depth,bin_lo,bin_hi,count");
    let mut totals = std::collections::BTreeMap::new();
    let mut bins = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *totals.entry(f[0].to_string()).or_insert(0u64) += f[3].parse::<u64>().unwrap();
        *bins.entry(f[0].to_string()).or_insert(0) += 1;
    }
    // First layer has 36 inputs; depth 0 maps straight to 10 classes.
    let batches = 200 / 50;
    assert_eq!(totals["0"], 10 * 36 * batches);
    assert_eq!(totals["2"], 500 * 36 * batches);
    assert!(bins.values().all(|&b| b == 11));
    assert!(out.join("kurtosis.csv").exists());
}

#[test]
fn count_ops_reports_and_cross_checks() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("ops");
    let run = ok(ffint8(
        work.path(),
        &["count-ops", "--out", path(&out), "--arch", "40-16-16-10", "--batch", "4", "--instrumented"],
    ));
    assert!(String::from_utf8(run.stdout).unwrap().contains("instrumented counts equal analytic counts"));
    let csv = std::fs::read_to_string(out.join("cost.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "mode,op_class,count");
    let ratio = csv.lines().find(|l| l.starts_with("ratio,")).unwrap();
    let r: f64 = ratio.rsplit(',').next().unwrap().parse().unwrap();
    assert!(r > 0.0);
    assert!(csv.contains("ff_int8_instrumented,int8_mul,"));
    assert!(csv.contains("bp_fp32,fp32_fmul,"));

    let ff_only = ok(ffint8(work.path(), &["count-ops", "--out", path(&out), "--modes", "ff_int8"]));
    assert!(String::from_utf8(ff_only.stdout).unwrap().contains("undefined"));
}

#[test]
fn help_exits_zero() {
    let out = ffint8(Path::new("."), &["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for verb in ["train-ff", "train-bp", "depth-sweep", "grad-hist", "count-ops", "eval"] {
        assert!(text.contains(verb), "{verb}");
    }
}

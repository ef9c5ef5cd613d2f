//! Train a 784-500-500 FF network on MNIST with the look-ahead (or greedy)
//! trainer and print one line per epoch.
//!
//!     FFINT8_MNIST_DIR=/path/to/mnist cargo run --release --example ff_mnist_lookahead -- --epochs 20

use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use clap::Parser;
use ffint8::costmeter::OpCounters;
use ffint8::data::{data_dir, load_split, Dataset, Split};
use ffint8::ffcore::{train_ff_lookahead, train_ff_vanilla, FFModel, Precision, TrainConfig};
use ffint8::metrics::MetricsLog;
use ffint8::rng::seeded_rng;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    vanilla: bool,
    #[arg(long)]
    fp32: bool,
    #[arg(long, default_value_t = 0.03)]
    lr: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda_step: f64,
    /// Use only the first N training images.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ffint8::Result<()> {
    let args = Args::parse();
    let dir = data_dir(Path::new("data/mnist"));
    let mut train = load_split(&dir, Split::Train)?;
    if let Some(n) = args.train_limit {
        train.truncate(n);
    }
    let mut test = load_split(&dir, Split::Test)?;
    if let Some(n) = args.test_limit {
        test.truncate(n);
    }
    let data = Dataset { train, test };
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        lambda_step: args.lambda_step,
        precision: if args.fp32 { Precision::Fp32 } else { Precision::Int8 },
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut model = FFModel::new(&[784, 500, 500], true, &mut seeded_rng(cfg.seed, 0))?;
    let counters = OpCounters::new();
    let t0 = Instant::now();
    let mut report = |log: &MetricsLog| {
        let r = log.rows.last().unwrap();
        let train = &log.rows[log.rows.len() - 2];
        println!(
            "epoch {:3}  lambda {:.3}  train {:.4}  test {:.4}  loss+ {:.4}  loss- {:.4}  {:6.1}s",
            r.epoch,
            r.lambda,
            train.accuracy,
            r.accuracy,
            train.mean_loss_pos,
            train.mean_loss_neg,
            t0.elapsed().as_secs_f64()
        );
        ControlFlow::Continue(())
    };
    if args.vanilla {
        train_ff_vanilla(&mut model, &data, &cfg, &counters, &mut report)?;
    } else {
        train_ff_lookahead(&mut model, &data, &cfg, &counters, &mut report)?;
    }
    let c = counters.snapshot();
    println!("int8 MACs {}  fp32 MACs {}  quantized elements {}", c.int8_mul, c.fp32_fmul, c.cmp32);
    Ok(())
}

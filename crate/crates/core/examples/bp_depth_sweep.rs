//! Train MLPs of increasing depth with FP32 and naive INT8 backpropagation
//! and print the accuracy gap per depth.
//!
//!     cargo run --release --example bp_depth_sweep -- --depths 0,1,2 --epochs 5

use std::path::Path;

use clap::Parser;
use ffint8::bpref::{depth_sweep, sweep_csv, BpConfig, GradientRounding};
use ffint8::data::{data_dir, load_split, Dataset, Split};

#[derive(Parser)]
struct Args {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    train_limit: Option<usize>,
    /// Round INT8 gradients to nearest instead of stochastically.
    #[arg(long)]
    nearest: bool,
}

fn main() -> ffint8::Result<()> {
    let args = Args::parse();
    let dir = data_dir(Path::new("data/mnist"));
    let mut train = load_split(&dir, Split::Train)?;
    if let Some(n) = args.train_limit {
        train.truncate(n);
    }
    let data = Dataset {
        train,
        test: load_split(&dir, Split::Test)?,
    };
    let cfg = BpConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        gradient_rounding: if args.nearest { GradientRounding::Nearest } else { GradientRounding::Stochastic },
        ..BpConfig::default()
    };
    let rows = depth_sweep(&args.depths, &data, &cfg, |r| {
        println!(
            "depth {}  fp32 {:.2}%  int8 {:.2}%  diff {:+.2}",
            r.depth,
            100.0 * r.acc_fp32,
            100.0 * r.acc_int8,
            r.diff()
        );
    })?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

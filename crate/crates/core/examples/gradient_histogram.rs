//! First-layer gradient histograms of FP32 backprop MLPs of increasing depth,
//! drawn as text, with excess kurtosis.
//!
//!     cargo run --release --example gradient_histogram -- --depths 0,3

use std::path::Path;

use clap::Parser;
use ffint8::bpref::{gradient_histogram, train_bp, BPModel, BpConfig, BpMode, HIDDEN_WIDTH};
use ffint8::costmeter::OpCounters;
use ffint8::data::{data_dir, load_split, Dataset, Split};
use ffint8::rng::seeded_rng;

#[derive(Parser)]
struct Args {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    depths: Vec<usize>,
    /// FP32 epochs before measuring.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 21)]
    bins: usize,
    #[arg(long)]
    train_limit: Option<usize>,
}

fn main() -> ffint8::Result<()> {
    let args = Args::parse();
    let dir = data_dir(Path::new("data/mnist"));
    let mut train = load_split(&dir, Split::Train)?;
    if let Some(n) = args.train_limit {
        train.truncate(n);
    }
    let data = Dataset { train, test: Vec::new() };
    let cfg = BpConfig {
        epochs: args.warmup,
        ..BpConfig::default()
    };
    for &depth in &args.depths {
        let mut model = BPModel::new(784, &vec![HIDDEN_WIDTH; depth], &mut seeded_rng(cfg.seed, depth as u64))?;
        train_bp(&mut model, &data, &cfg, BpMode::Fp32, &OpCounters::new(), &mut ())?;
        let h = gradient_histogram(&model, &data.train, cfg.batch_size, 0, args.bins)?;
        println!("depth {depth}: excess kurtosis {:.2}, range [{:.2e}, {:.2e}]", h.excess_kurtosis, h.min, h.max);
        let peak = *h.counts.iter().max().unwrap_or(&1) as f64;
        for (i, &c) in h.counts.iter().enumerate() {
            let bar = (60.0 * (c as f64 / peak).sqrt()).round() as usize;
            println!("  {:>+10.2e} {}", h.edges[i], "#".repeat(bar));
        }
    }
    Ok(())
}

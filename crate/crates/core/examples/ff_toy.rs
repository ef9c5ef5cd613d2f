//! Look-ahead FF on a synthetic 4-class problem that needs no dataset.
//! Prints per-layer goodness for one sample under every candidate label.
//!
//!     cargo run --release --example ff_toy

use std::ops::ControlFlow;

use ffint8::costmeter::OpCounters;
use ffint8::data::{Dataset, LabeledImage};
use ffint8::ffcore::{candidate_goodness, predict, train_ff_lookahead, FFModel, Precision, TrainConfig};
use ffint8::metrics::MetricsLog;
use ffint8::rng::seeded_rng;
use rand::Rng;

const CLASSES: usize = 4;

// Each class lights up its own block of 8 features after the label slots.
fn samples(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = seeded_rng(seed, 1);
    (0..n)
        .map(|i| {
            let label = i % CLASSES;
            let mut pixels: Vec<f32> = (0..42).map(|_| rng.random_range(0.0..0.3)).collect();
            for p in &mut pixels[10 + 8 * label..18 + 8 * label] {
                *p += 0.7;
            }
            LabeledImage { pixels, label: label as u8 }
        })
        .collect()
}

fn main() -> ffint8::Result<()> {
    let data = Dataset {
        train: samples(800, 1),
        test: samples(200, 2),
    };
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 16,
        learning_rate: 0.05,
        lambda_step: 0.01,
        precision: Precision::Int8,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut model = FFModel::new(&[42, 64, 64], true, &mut seeded_rng(cfg.seed, 0))?;
    let counters = OpCounters::new();
    let mut show = |log: &MetricsLog| {
        let r = log.rows.last().unwrap();
        println!("epoch {:>2} {:<5} accuracy {:.3}", r.epoch, r.split, r.accuracy);
        ControlFlow::Continue(())
    };
    train_ff_lookahead(&mut model, &data, &cfg, &counters, &mut show)?;

    let sample = &data.test[1];
    let g = candidate_goodness(&model, &sample.pixels, cfg.precision, false, &OpCounters::new())?;
    println!("sample with label {}:", sample.label);
    for (label, v) in g.iter().enumerate().take(CLASSES) {
        println!("  candidate {label}: total goodness {v:.3}");
    }
    println!("predicted {}", predict(&model, &sample.pixels, &cfg)?);
    Ok(())
}

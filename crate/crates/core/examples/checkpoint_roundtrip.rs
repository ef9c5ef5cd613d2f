//! Train a small FF model, save it, reload it, and classify a few test
//! images with the reloaded copy.
//!
//!     cargo run --release --example checkpoint_roundtrip

use std::path::Path;

use ffint8::costmeter::OpCounters;
use ffint8::data::{data_dir, load_split, Dataset, Split};
use ffint8::ffcore::{
    evaluate, load_checkpoint, predict, save_checkpoint, train_ff_lookahead, Checkpoint, FFModel, ModelKind,
    TrainConfig,
};
use ffint8::rng::seeded_rng;

fn main() -> ffint8::Result<()> {
    let dir = data_dir(Path::new("data/mnist"));
    let mut train = load_split(&dir, Split::Train)?;
    train.truncate(6000);
    let mut test = load_split(&dir, Split::Test)?;
    test.truncate(1000);
    let data = Dataset { train, test };

    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let mut model = FFModel::new(&[784, 200, 200], true, &mut seeded_rng(cfg.seed, 0))?;
    train_ff_lookahead(&mut model, &data, &cfg, &OpCounters::new(), &mut ())?;

    let path = std::env::temp_dir().join("ffint8_example.ckpt");
    save_checkpoint(
        &path,
        &Checkpoint {
            kind: ModelKind::Ff,
            layers: model.layers().to_vec(),
            config: serde_json::json!({ "train": cfg }),
        },
    )?;
    let loaded = load_checkpoint(&path)?;
    let reloaded = FFModel::from_layers(loaded.layers)?;
    assert_eq!(reloaded.layers(), model.layers());

    let summary = evaluate(&reloaded, &data.test, &cfg, &OpCounters::new())?;
    println!("reloaded model: {:.2}% on {} test images", 100.0 * summary.accuracy, summary.total);
    for img in data.test.iter().take(8) {
        println!("label {} predicted {}", img.label, predict(&reloaded, &img.pixels, &cfg)?);
    }
    Ok(())
}

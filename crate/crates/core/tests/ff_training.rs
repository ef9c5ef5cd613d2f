//! FF trainers on toy data: learning, determinism, prediction and the
//! operation-count audit.

use ffint8::costmeter::{analytic_counts, ArchSpec, CostMode, OpCounters};
use ffint8::data::{embed_label, Dataset, LabeledImage, Split};
use ffint8::ffcore::{
    evaluate, predict, train_ff_lookahead, train_ff_vanilla, FFModel, LookaheadMode,
    Precision, TrainConfig,
};
use ffint8::qtensor::RealTensor;
use ffint8::rng::NoiseStream;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Box-Muller standard normal.
fn normal<R: Rng>(rng: &mut R) -> f32 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

/// Two Gaussian blobs in the slots after the label embedding.
fn blobs(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let centre = if label == 0 { 1.0 } else { -1.0 };
            let mut pixels = vec![0.0f32; 20];
            for (j, p) in pixels.iter_mut().enumerate().skip(10) {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                *p = (0.5 + 0.4 * centre * sign + 0.1 * normal(&mut rng)).clamp(0.0, 1.0);
            }
            LabeledImage { pixels, label }
        })
        .collect()
}

fn toy_cfg(precision: Precision) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 8,
        learning_rate: 0.1,
        precision,
        seed: 21,
        ..TrainConfig::default()
    }
}

fn mean_goodness(model: &FFModel, images: &[LabeledImage], positive: bool) -> f64 {
    let rows: Vec<f32> = images
        .iter()
        .flat_map(|im| {
            let label = if positive { im.label as usize } else { 1 - im.label as usize };
            embed_label(im, label).unwrap()
        })
        .collect();
    let x = RealTensor::matrix(images.len(), 20, rows).unwrap();
    let t = model.forward_trace(&x, Precision::Fp32, &OpCounters::new(), NoiseStream::new(0)).unwrap();
    let g = t.goodness();
    g[0].iter().sum::<f64>() / images.len() as f64
}

#[test]
fn single_layer_separates_positive_from_negative() {
    for precision in [Precision::Fp32, Precision::Int8] {
        let data = Dataset {
            train: blobs(64, 1),
            test: blobs(32, 2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = FFModel::new(&[20, 16], true, &mut rng).unwrap();
        let cfg = toy_cfg(precision);
        let log = train_ff_vanilla(&mut model, &data, &cfg, &OpCounters::new(), &mut ()).unwrap();
        let gp = mean_goodness(&model, &data.test, true);
        let gn = mean_goodness(&model, &data.test, false);
        assert!(gp > gn, "{precision:?}: G_pos {gp} <= G_neg {gn}");
        assert_eq!(log.test_rows().count(), 30);
        let last = log.test_rows().last().unwrap();
        assert!(last.accuracy > 0.9, "{precision:?}: toy accuracy {}", last.accuracy);
        // A training point is classified as its own label.
        let p = &data.train[0];
        assert_eq!(predict(&model, &p.pixels, &cfg).unwrap(), p.label as usize);
    }
}

#[test]
fn lookahead_learns_the_toy_set() {
    let data = Dataset {
        train: blobs(64, 3),
        test: blobs(32, 4),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = FFModel::new(&[20, 16, 12], true, &mut rng).unwrap();
    let cfg = TrainConfig {
        lambda_step: 0.01,
        ..toy_cfg(Precision::Int8)
    };
    let log = train_ff_lookahead(&mut model, &data, &cfg, &OpCounters::new(), &mut ()).unwrap();
    assert!(log.test_rows().last().unwrap().accuracy > 0.9);
    let eval = evaluate(&model, &data.test, &cfg, &OpCounters::new()).unwrap();
    assert_eq!(eval.accuracy, log.test_rows().last().unwrap().accuracy);
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let data = Dataset {
        train: blobs(16, 1),
        test: vec![],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = FFModel::new(&[20, 8, 8], true, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..toy_cfg(Precision::Int8)
    };
    for lookahead in [false, true] {
        let mut m = model.clone();
        let log = if lookahead {
            train_ff_lookahead(&mut m, &data, &cfg, &OpCounters::new(), &mut ())
        } else {
            train_ff_vanilla(&mut m, &data, &cfg, &OpCounters::new(), &mut ())
        }
        .unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(m.layers(), model.layers());
    }
}

#[test]
fn fixed_seed_runs_are_bitwise_identical() {
    let data = Dataset {
        train: blobs(40, 8),
        test: blobs(10, 9),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = FFModel::new(&[20, 10, 10], true, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        lambda_step: 0.05,
        ..toy_cfg(Precision::Int8)
    };
    type Trainer = fn(&mut FFModel, &Dataset, &TrainConfig, &OpCounters, &mut ()) -> ffint8::Result<ffint8::metrics::MetricsLog>;
    let trainers: [Trainer; 2] = [train_ff_vanilla, train_ff_lookahead];
    for train in trainers {
        let run = || {
            let mut m = model.clone();
            let log = train(&mut m, &data, &cfg, &OpCounters::new(), &mut ()).unwrap();
            (m, log)
        };
        let (ma, la) = run();
        let (mb, lb) = run();
        assert_eq!(la.to_csv(), lb.to_csv());
        assert_eq!(la.counters_csv(), lb.counters_csv());
        assert_eq!(ma.layers(), mb.layers());
        assert_ne!(ma.layers(), model.layers());
    }
}

#[test]
fn observer_can_stop_training() {
    let data = Dataset {
        train: blobs(16, 1),
        test: blobs(8, 2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = FFModel::new(&[20, 8], true, &mut rng).unwrap();
    let mut stop = |log: &ffint8::metrics::MetricsLog| {
        if log.test_rows().count() >= 3 {
            std::ops::ControlFlow::Break(())
        } else {
            std::ops::ControlFlow::Continue(())
        }
    };
    let log = train_ff_lookahead(&mut model, &data, &toy_cfg(Precision::Fp32), &OpCounters::new(), &mut stop).unwrap();
    assert_eq!(log.test_rows().count(), 3);
    assert_eq!(log.rows.iter().filter(|r| r.split == Split::Train).count(), 3);
}

#[test]
fn precision_modes_are_pure() {
    let data = Dataset {
        train: blobs(24, 1),
        test: vec![],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = FFModel::new(&[20, 8, 8], true, &mut rng).unwrap();
    for precision in [Precision::Fp32, Precision::Int8] {
        let cfg = TrainConfig {
            epochs: 2,
            lambda0: 0.1,
            ..toy_cfg(precision)
        };
        let counters = OpCounters::new();
        train_ff_lookahead(&mut model.clone(), &data, &cfg, &counters, &mut ()).unwrap();
        let c = counters.snapshot();
        match precision {
            Precision::Fp32 => assert_eq!((c.int8_mul, c.int8_add, c.cmp32), (0, 0, 0)),
            Precision::Int8 => {
                assert_eq!(c.fp32_fmul, 0);
                assert!(c.int8_mul > 0);
            }
        }
    }
}

#[test]
fn nan_input_is_a_numeric_or_tensor_error() {
    let mut train = blobs(8, 1);
    train[3].pixels[15] = f32::NAN;
    let data = Dataset { train, test: vec![] };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = FFModel::new(&[20, 8], true, &mut rng).unwrap();
    for precision in [Precision::Fp32, Precision::Int8] {
        let err = train_ff_lookahead(&mut model, &data, &toy_cfg(precision), &OpCounters::new(), &mut ()).unwrap_err();
        assert!(
            matches!(err, ffint8::Error::Numeric(_) | ffint8::Error::InvalidTensor(_)),
            "{err:?}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn instrumented_counts_equal_analytic(
        seed in 0u64..1000,
        hidden in proptest::collection::vec(1usize..=12, 1..=3),
        batch in 1usize..=6,
        batches in 1usize..=3,
        int8 in any::<bool>(),
        chained in any::<bool>(),
        lambda0 in prop_oneof![Just(0.0), Just(0.2)],
    ) {
        let mut widths = vec![20usize];
        widths.extend(&hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = FFModel::new(&widths, true, &mut rng).unwrap();
        let data = Dataset { train: blobs(batch * batches, seed), test: blobs(3, seed + 1) };
        let precision = if int8 { Precision::Int8 } else { Precision::Fp32 };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: batch,
            lambda0,
            precision,
            lookahead_mode: if chained { LookaheadMode::Chained } else { LookaheadMode::Detached },
            seed,
            ..TrainConfig::default()
        };
        let counters = OpCounters::new();
        let log = train_ff_lookahead(&mut model, &data, &cfg, &counters, &mut ()).unwrap();
        let mode = if int8 { CostMode::FfInt8 } else { CostMode::FfFp32 };
        let mut total = Default::default();
        for row in log.rows.iter().filter(|r| r.split == Split::Train) {
            let chain = chained && row.lambda != 0.0;
            let per_step = analytic_counts(&ArchSpec::new(widths.clone(), batch, mode).with_chain(chain)).unwrap();
            prop_assert_eq!(row.counters, per_step.scaled(batches as u64));
            total += row.counters;
        }
        prop_assert_eq!(counters.snapshot(), total);
    }
}

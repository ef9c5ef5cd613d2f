//! Greedy (vanilla) and look-ahead FF trainers.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::{lookahead_output_grads, LookaheadMode};
use super::layer::{weight_grad, Precision, WeightRounding};
use super::loss::loss;
use super::predict::evaluate;
use super::{FFModel, TAG_WGRAD};
use crate::costmeter::OpCounters;
use crate::data::{polar_matrices, Dataset, LabeledImage, Polarity, Split};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::qtensor::RealTensor;
use crate::rng::{seeded_rng, NoiseStream};

const PURPOSE_SHUFFLE: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub theta: f64,
    pub lambda0: f64,
    pub lambda_step: f64,
    /// Upper bound on lambda; unbounded when absent.
    pub lambda_max: Option<f64>,
    /// Total epochs for the look-ahead trainer; epochs per layer for the
    /// vanilla trainer.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub precision: Precision,
    pub lookahead_mode: LookaheadMode,
    pub weight_rounding: WeightRounding,
    pub seed: u64,
    pub goodness_skip_first_layer: bool,
    /// Record real epoch durations in `wall_ms`. Off by default so metrics
    /// stay bitwise reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            theta: 2.0,
            lambda0: 0.0,
            lambda_step: 0.001,
            lambda_max: None,
            epochs: 150,
            batch_size: 32,
            learning_rate: 0.03,
            precision: Precision::Int8,
            lookahead_mode: LookaheadMode::Chained,
            weight_rounding: WeightRounding::Nearest,
            seed: 0,
            goodness_skip_first_layer: false,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.check_hyper()
    }

    fn check_hyper(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return bad("theta must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !self.lambda0.is_finite() || !self.lambda_step.is_finite() {
            return bad("lambda0 and lambda_step must be finite");
        }
        if matches!(self.lambda_max, Some(m) if m.is_nan()) {
            return bad("lambda_max must be a number");
        }
        Ok(())
    }
}

/// `lambda0 + lambda_step * epoch`, capped at `lambda_max`.
pub fn lambda_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let l = cfg.lambda0 + cfg.lambda_step * epoch as f64;
    cfg.lambda_max.map_or(l, |m| l.min(m))
}

/// Called after every epoch with the log so far; `Break` stops training.
pub trait EpochObserver {
    fn on_epoch(&mut self, log: &MetricsLog) -> ControlFlow<()>;
}

impl EpochObserver for () {
    fn on_epoch(&mut self, _: &MetricsLog) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl<F: FnMut(&MetricsLog) -> ControlFlow<()>> EpochObserver for F {
    fn on_epoch(&mut self, log: &MetricsLog) -> ControlFlow<()> {
        self(log)
    }
}

#[derive(Default)]
struct EpochStats {
    samples: usize,
    wins: usize,
    loss_pos: f64,
    loss_neg: f64,
}

/// Which layers a step runs and updates.
#[derive(Clone, Copy)]
struct StepPlan {
    upto: usize,
    from: usize,
    lambda: f64,
}

fn ff_step(
    model: &mut FFModel,
    batch: &[&LabeledImage],
    rng: &mut impl rand::Rng,
    cfg: &TrainConfig,
    plan: StepPlan,
    stream: NoiseStream,
    counters: &OpCounters,
    stats: &mut EpochStats,
) -> Result<()> {
    let (pos, neg) = polar_matrices(batch, rng)?;
    let weights = match cfg.precision {
        Precision::Int8 => Some(model.quantize_weights(plan.upto, cfg.weight_rounding, stream, counters)?),
        Precision::Fp32 => None,
    };
    let updated = plan.upto - plan.from;
    let mut sums: Vec<Option<(RealTensor, Vec<f32>)>> = vec![None; updated];
    let mut totals = [Vec::new(), Vec::new()];
    for (p, (x, polarity)) in [(&pos, Polarity::Positive), (&neg, Polarity::Negative)]
        .into_iter()
        .enumerate()
    {
        let pass = stream.derive(p as u64 + 1);
        let trace = model.trace_with(x, weights.clone(), plan.upto, counters, pass)?;
        let good = trace.goodness();
        let skip = usize::from(cfg.goodness_skip_first_layer && good.len() > 1);
        totals[p] = (0..batch.len())
            .map(|s| good[skip..].iter().map(|l| l[s]).sum::<f64>())
            .collect();
        let mut l = 0.0;
        for g in good[plan.from..].iter().flatten() {
            l += loss(polarity, *g, cfg.theta);
        }
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite {polarity:?} loss")));
        }
        match polarity {
            Polarity::Positive => stats.loss_pos += l / updated as f64,
            Polarity::Negative => stats.loss_neg += l / updated as f64,
        }
        let grads = lookahead_output_grads(
            model,
            &trace,
            plan.from,
            polarity,
            cfg.theta,
            plan.lambda,
            cfg.lookahead_mode,
            counters,
            pass,
        )?;
        for (j, g) in grads.iter().enumerate() {
            let i = plan.from + j;
            let (gw, gb) = weight_grad(
                &model.layers()[i],
                &trace.layers[i],
                g,
                counters,
                pass.derive(TAG_WGRAD + i as u64),
            )?;
            sums[j] = Some(match sums[j].take() {
                None => (gw, gb),
                Some((aw, ab)) => {
                    let w = aw.data().iter().zip(gw.data()).map(|(a, b)| a + b).collect();
                    let b = ab.iter().zip(&gb).map(|(a, b)| a + b).collect();
                    (RealTensor::from_raw(aw.shape().to_vec(), w), b)
                }
            });
        }
    }
    stats.samples += batch.len();
    stats.wins += totals[0].iter().zip(&totals[1]).filter(|(p, n)| p > n).count();

    let lr = cfg.learning_rate as f32;
    for (j, s) in sums.into_iter().enumerate() {
        let (gw, gb) = s.expect("every updated layer has a gradient");
        let layer = model.layer_mut(plan.from + j);
        layer.sgd_step(&gw, &gb, lr);
        if !layer.is_finite() {
            return Err(Error::Numeric(format!("layer {} diverged", plan.from + j)));
        }
    }
    Ok(())
}

struct Runner<'a, O> {
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    counters: &'a OpCounters,
    observer: &'a mut O,
    log: MetricsLog,
    rng: rand_chacha::ChaCha8Rng,
    order: Vec<usize>,
    step: u64,
}

impl<O: EpochObserver> Runner<'_, O> {
    /// Runs one epoch and records its rows. Returns `Break` on request.
    fn epoch(&mut self, model: &mut FFModel, epoch: usize, plan: StepPlan) -> Result<ControlFlow<()>> {
        let start = Instant::now();
        let before = self.counters.snapshot();
        self.order.shuffle(&mut self.rng);
        let mut stats = EpochStats::default();
        let base = NoiseStream::new(self.cfg.seed);
        for chunk in self.order.chunks(self.cfg.batch_size) {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &self.data.train[i]).collect();
            let stream = base.derive(self.step);
            self.step += 1;
            ff_step(model, &batch, &mut self.rng, self.cfg, plan, stream, self.counters, &mut stats)?;
        }
        let wall = |s: &Instant| {
            if self.cfg.record_wall_time {
                s.elapsed().as_millis() as u64
            } else {
                0
            }
        };
        let ns = stats.samples.max(1) as f64;
        self.log.push(MetricsRow {
            epoch,
            split: Split::Train,
            accuracy: stats.wins as f64 / stats.samples.max(1) as f64,
            mean_loss_pos: stats.loss_pos / ns,
            mean_loss_neg: stats.loss_neg / ns,
            lambda: plan.lambda,
            wall_ms: wall(&start),
            counters: self.counters.snapshot().since(&before),
        });
        if !self.data.test.is_empty() {
            let eval_counters = OpCounters::new();
            let s = evaluate(model, &self.data.test, self.cfg, &eval_counters)?;
            self.log.push(MetricsRow {
                epoch,
                split: Split::Test,
                accuracy: s.accuracy,
                mean_loss_pos: s.mean_loss_pos,
                mean_loss_neg: s.mean_loss_neg,
                lambda: plan.lambda,
                wall_ms: wall(&start),
                counters: eval_counters.snapshot(),
            });
        }
        Ok(self.observer.on_epoch(&self.log))
    }
}

fn runner<'a, O>(
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    counters: &'a OpCounters,
    observer: &'a mut O,
) -> Result<Runner<'a, O>> {
    cfg.check_hyper()?;
    Ok(Runner {
        data,
        cfg,
        counters,
        observer,
        log: MetricsLog::default(),
        rng: seeded_rng(cfg.seed, PURPOSE_SHUFFLE),
        order: (0..data.train.len()).collect(),
        step: 0,
    })
}

/// Look-ahead trainer: one forward pass per polarity per batch updates
/// every layer with its look-ahead gradient; lambda follows the schedule.
pub fn train_ff_lookahead(
    model: &mut FFModel,
    data: &Dataset,
    cfg: &TrainConfig,
    counters: &OpCounters,
    observer: &mut impl EpochObserver,
) -> Result<MetricsLog> {
    let mut run = runner(data, cfg, counters, observer)?;
    let upto = model.num_layers();
    for epoch in 0..cfg.epochs {
        let plan = StepPlan {
            upto,
            from: 0,
            lambda: lambda_schedule(epoch, cfg),
        };
        if run.epoch(model, epoch, plan)?.is_break() {
            break;
        }
    }
    Ok(run.log)
}

/// Greedy trainer: layer `l` trains for `cfg.epochs` epochs on its local
/// loss with layers below it frozen. Epochs are numbered globally.
pub fn train_ff_vanilla(
    model: &mut FFModel,
    data: &Dataset,
    cfg: &TrainConfig,
    counters: &OpCounters,
    observer: &mut impl EpochObserver,
) -> Result<MetricsLog> {
    let mut run = runner(data, cfg, counters, observer)?;
    for l in 0..model.num_layers() {
        for e in 0..cfg.epochs {
            let plan = StepPlan {
                upto: l + 1,
                from: l,
                lambda: 0.0,
            };
            if run.epoch(model, l * cfg.epochs + e, plan)?.is_break() {
                return Ok(run.log);
            }
        }
    }
    Ok(run.log)
}

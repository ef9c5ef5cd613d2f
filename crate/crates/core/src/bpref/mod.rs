//! Backpropagation reference trainer with an FP32 mode and a naive INT8
//! mode that quantizes every backpropagated gradient tensor.

mod histogram;
mod sweep;

use std::ops::ControlFlow;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costmeter::OpCounters;
use crate::data::{Dataset, LabeledImage, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::ffcore::{Activation, DenseLayer, EpochObserver};
use crate::linalg;
use crate::metrics::{MetricsLog, MetricsRow};
use crate::qtensor::{nearest_slice, scale_of, stochastic_slice, RealTensor};
use crate::rng::{seeded_rng, NoiseStream};

pub use histogram::{gradient_histogram, GradientHistogram, HISTOGRAM_BINS};
pub use sweep::{depth_sweep, sweep_csv, SweepRow};

const PURPOSE_SHUFFLE: u64 = 2;
pub const HIDDEN_WIDTH: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BpMode {
    Fp32,
    Int8Naive,
}

impl BpMode {
    pub fn name(self) -> &'static str {
        match self {
            BpMode::Fp32 => "fp32",
            BpMode::Int8Naive => "int8_naive",
        }
    }
}

impl FromStr for BpMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(BpMode::Fp32),
            "int8_naive" | "int8" => Ok(BpMode::Int8Naive),
            _ => Err(Error::Config(format!("unknown bp mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientRounding {
    Stochastic,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Rounding used by `Int8Naive` gradient quantization.
    pub gradient_rounding: GradientRounding,
    /// See `TrainConfig::record_wall_time`.
    pub record_wall_time: bool,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
            gradient_rounding: GradientRounding::Stochastic,
            record_wall_time: false,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// ReLU hidden layers followed by a linear softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct BPModel {
    layers: Vec<DenseLayer>,
}

/// Per-layer `(gW, gb)` plus the mean cross-entropy and correct count.
pub struct BpGradients {
    pub layers: Vec<(RealTensor, Vec<f32>)>,
    pub loss: f64,
    pub correct: usize,
}

impl BPModel {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!("invalid BP widths {input} {hidden:?}")));
        }
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(NUM_CLASSES);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { Activation::Relu };
                DenseLayer::init(w[0], w[1], act, false, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(head) = layers.last() else {
            return Err(Error::Config("model has no layers".into()));
        };
        if head.fan_out() != NUM_CLASSES {
            return Err(Error::Shape(format!("head width {} != {NUM_CLASSES}", head.fan_out())));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape("layer widths do not chain".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in())
            .chain(self.layers.iter().map(|l| l.fan_out()))
            .collect()
    }

    fn forward_all(&self, x: &RealTensor, counters: &OpCounters) -> Vec<RealTensor> {
        let mut acts = vec![x.clone()];
        for l in &self.layers {
            let h = acts.last().unwrap();
            let (b, n, k) = (h.rows(), l.fan_out(), l.fan_in());
            let mut z = linalg::matmul_nt(h.data(), l.weights.data(), b, k, n, counters);
            for row in z.chunks_exact_mut(n) {
                for (v, bias) in row.iter_mut().zip(&l.bias) {
                    *v += bias;
                    if l.activation == Activation::Relu {
                        *v = v.max(0.0);
                    }
                }
            }
            acts.push(RealTensor::from_raw(vec![b, n], z));
        }
        acts
    }

    /// Class logits for a batch.
    pub fn logits(&self, x: &RealTensor, counters: &OpCounters) -> Result<RealTensor> {
        if x.shape().len() != 2 || x.cols() != self.layers[0].fan_in() {
            return Err(Error::Shape(format!("expected batch x {}", self.layers[0].fan_in())));
        }
        Ok(self.forward_all(x, counters).pop().unwrap())
    }

    /// Gradients of the mean cross-entropy. In `Int8Naive` mode every
    /// backpropagated tensor is quantized to INT8 with `rounding` and back
    /// before use: the pre-activation gradient of each layer and the weight
    /// and bias gradients.
    pub fn gradients(
        &self,
        x: &RealTensor,
        labels: &[u8],
        mode: BpMode,
        rounding: GradientRounding,
        counters: &OpCounters,
        stream: NoiseStream,
    ) -> Result<BpGradients> {
        if labels.len() != x.rows() || labels.iter().any(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Shape("labels do not match the batch".into()));
        }
        let acts = self.forward_all(x, counters);
        let b = x.rows();
        let logits = acts.last().unwrap();
        let (mut loss, mut correct) = (0.0f64, 0usize);
        let mut delta = vec![0.0f32; b * NUM_CLASSES];
        for r in 0..b {
            let z = logits.row(r);
            let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum: f64 = z.iter().map(|&v| ((v - m) as f64).exp()).sum();
            let y = labels[r] as usize;
            loss += sum.ln() - (z[y] - m) as f64;
            if crate::ffcore::argmax_label(&z.iter().map(|&v| v as f64).collect::<Vec<_>>()) == y {
                correct += 1;
            }
            for (c, d) in delta[r * NUM_CLASSES..(r + 1) * NUM_CLASSES].iter_mut().enumerate() {
                let p = ((z[c] - m) as f64).exp() / sum;
                *d = ((p - f64::from(u8::from(c == y))) / b as f64) as f32;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        let mut grads = vec![];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (n, k) = (l.fan_out(), l.fan_in());
            let s = stream.derive(i as u64);
            if mode == BpMode::Int8Naive {
                fake_quantize(&mut delta, rounding, s.derive(0), counters)?;
            }
            let input = &acts[i];
            let mut gw = linalg::matmul_tn(&delta, input.data(), b, n, k, counters);
            let mut gb = vec![0.0f32; n];
            for row in delta.chunks_exact(n) {
                for (a, v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            if mode == BpMode::Int8Naive {
                fake_quantize(&mut gw, rounding, s.derive(1), counters)?;
                fake_quantize(&mut gb, rounding, s.derive(2), counters)?;
            }
            if i > 0 {
                let mut prev = linalg::matmul_nn(&delta, l.weights.data(), b, n, k, counters);
                for (g, &a) in prev.iter_mut().zip(input.data()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = prev;
            }
            grads.push((RealTensor::from_raw(vec![n, k], gw), gb));
        }
        grads.reverse();
        Ok(BpGradients {
            layers: grads,
            loss: loss / b as f64,
            correct,
        })
    }

    pub fn accuracy(&self, images: &[LabeledImage], counters: &OpCounters) -> Result<(f64, f64)> {
        let mut correct = 0usize;
        let mut loss = 0.0f64;
        for chunk in images.chunks(1000) {
            let refs: Vec<&LabeledImage> = chunk.iter().collect();
            let (x, labels) = batch_matrix(&refs);
            let g = self.score_batch(&x, &labels, counters)?;
            correct += g.0;
            loss += g.1;
        }
        let n = images.len().max(1) as f64;
        Ok((correct as f64 / n, loss / n))
    }

    /// Correct count and summed cross-entropy without a backward pass.
    fn score_batch(&self, x: &RealTensor, labels: &[u8], counters: &OpCounters) -> Result<(usize, f64)> {
        let logits = self.logits(x, counters)?;
        let mut correct = 0;
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let z: Vec<f64> = logits.row(r).iter().map(|&v| v as f64).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[y as usize];
            if crate::ffcore::argmax_label(&z) == y as usize {
                correct += 1;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        Ok((correct, loss))
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }
}

/// INT8 round trip with one per-tensor scale.
fn fake_quantize(v: &mut [f32], rounding: GradientRounding, stream: NoiseStream, counters: &OpCounters) -> Result<()> {
    let scale = scale_of(v)?;
    counters.record_quantize(v.len());
    let q = match rounding {
        GradientRounding::Stochastic => stochastic_slice(v, scale, stream),
        GradientRounding::Nearest => nearest_slice(v, scale),
    };
    for (x, q) in v.iter_mut().zip(q) {
        *x = q as f32 * scale;
    }
    Ok(())
}

pub(crate) fn batch_matrix(images: &[&LabeledImage]) -> (RealTensor, Vec<u8>) {
    let cols = images.first().map_or(0, |i| i.pixels.len());
    let data = images.iter().flat_map(|i| i.pixels.iter().copied()).collect();
    (
        RealTensor::from_raw(vec![images.len(), cols], data),
        images.iter().map(|i| i.label).collect(),
    )
}

/// Minibatch SGD on cross-entropy. Rows use `mean_loss_pos` for the
/// cross-entropy; `mean_loss_neg` and `lambda` are 0.
pub fn train_bp(
    model: &mut BPModel,
    data: &Dataset,
    cfg: &BpConfig,
    mode: BpMode,
    counters: &OpCounters,
    observer: &mut impl EpochObserver,
) -> Result<MetricsLog> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, PURPOSE_SHUFFLE);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let base = NoiseStream::new(cfg.seed);
    let lr = cfg.learning_rate as f32;
    let mut log = MetricsLog::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let before = counters.snapshot();
        order.shuffle(&mut rng);
        let (mut correct, mut loss) = (0usize, 0.0f64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (x, labels) = batch_matrix(&batch);
            let g = model.gradients(&x, &labels, mode, cfg.gradient_rounding, counters, base.derive(step))?;
            step += 1;
            correct += g.correct;
            loss += g.loss * chunk.len() as f64;
            for (l, (gw, gb)) in model.layers.iter_mut().zip(&g.layers) {
                l.sgd_step(gw, gb, lr);
                if !l.is_finite() {
                    return Err(Error::Numeric("weights diverged".into()));
                }
            }
        }
        let wall = |s: &Instant| if cfg.record_wall_time { s.elapsed().as_millis() as u64 } else { 0 };
        let n = data.train.len().max(1) as f64;
        log.push(MetricsRow {
            epoch,
            split: Split::Train,
            accuracy: correct as f64 / n,
            mean_loss_pos: loss / n,
            mean_loss_neg: 0.0,
            lambda: 0.0,
            wall_ms: wall(&start),
            counters: counters.snapshot().since(&before),
        });
        if !data.test.is_empty() {
            let eval = OpCounters::new();
            let (acc, ce) = model.accuracy(&data.test, &eval)?;
            log.push(MetricsRow {
                epoch,
                split: Split::Test,
                accuracy: acc,
                mean_loss_pos: ce,
                mean_loss_neg: 0.0,
                lambda: 0.0,
                wall_ms: wall(&start),
                counters: eval.snapshot(),
            });
        }
        if let ControlFlow::Break(()) = observer.on_epoch(&log) {
            break;
        }
    }
    Ok(log)
}

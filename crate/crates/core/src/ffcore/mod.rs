//! Forward-Forward layers, losses, local and look-ahead gradients, trainers
//! and goodness-based prediction.

mod checkpoint;
mod grad;
mod layer;
mod loss;
mod predict;
mod train;

use std::sync::Arc;

use rand::Rng;

use crate::costmeter::OpCounters;
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::qtensor::RealTensor;
use crate::rng::NoiseStream;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind, CHECKPOINT_VERSION};
pub use grad::{local_gradient, lookahead_gradient, LookaheadMode};
pub use layer::{Activation, DenseLayer, Precision, WeightRounding};
pub use loss::{
    goodness, lookahead_loss, loss, loss_neg, loss_pos, loss_slope, sigmoid, softplus,
    GoodnessRecord,
};
pub use predict::{argmax_label, candidate_goodness, evaluate, predict, EvalSummary};
pub use train::{
    lambda_schedule, train_ff_lookahead, train_ff_vanilla, EpochObserver, TrainConfig,
};

pub(crate) use layer::{forward_layer, LayerTrace, QuantWeights};

// Stream tags. Step-level streams derive weight noise from `TAG_WEIGHTS`;
// per-pass streams derive activation, weight-gradient and chain noise.
pub(crate) const TAG_WEIGHTS: u64 = 0x100;
pub(crate) const TAG_ACT: u64 = 0x200;
pub(crate) const TAG_WGRAD: u64 = 0x300;
pub(crate) const TAG_CHAIN: u64 = 0x400;

/// A stack of hidden layers trained with layer-local goodness objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct FFModel {
    layers: Vec<DenseLayer>,
    label_slots: usize,
    version: u64,
}

impl FFModel {
    /// `widths` = input width followed by hidden widths, e.g. `[784, 500, 500]`.
    /// Every layer after the first normalizes its input when
    /// `normalize_hidden_inputs` is set.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        normalize_hidden_inputs: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid FF widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::init(w[0], w[1], Activation::Relu, i > 0 && normalize_hidden_inputs, rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer widths {} -> {} do not chain",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() || !l.is_finite() {
                return Err(Error::InvalidTensor("layer parameters malformed".into()));
            }
        }
        if layers[0].fan_in() < NUM_CLASSES {
            return Err(Error::Shape("input narrower than the label embedding".into()));
        }
        Ok(Self {
            layers,
            label_slots: NUM_CLASSES,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Mutable access; invalidates outstanding traces.
    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer {
        self.version += 1;
        &mut self.layers[i]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn label_slots(&self) -> usize {
        self.label_slots
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.fan_out()))
            .collect()
    }

    pub(crate) fn quantize_weights(
        &self,
        upto: usize,
        rounding: WeightRounding,
        stream: NoiseStream,
        counters: &OpCounters,
    ) -> Result<Arc<Vec<QuantWeights>>> {
        let w = self.layers[..upto]
            .iter()
            .enumerate()
            .map(|(i, l)| QuantWeights::new(l, rounding, stream.derive(TAG_WEIGHTS + i as u64), counters))
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(w))
    }

    /// Full forward pass retaining every layer's activations.
    pub fn forward_trace(
        &self,
        x: &RealTensor,
        precision: Precision,
        counters: &OpCounters,
        stream: NoiseStream,
    ) -> Result<ModelTrace> {
        let weights = match precision {
            Precision::Int8 => Some(self.quantize_weights(
                self.layers.len(),
                WeightRounding::Nearest,
                stream,
                counters,
            )?),
            Precision::Fp32 => None,
        };
        self.trace_with(x, weights, self.layers.len(), counters, stream)
    }

    /// Forward through layers `0..upto` using a shared INT8 weight copy.
    pub(crate) fn trace_with(
        &self,
        x: &RealTensor,
        weights: Option<Arc<Vec<QuantWeights>>>,
        upto: usize,
        counters: &OpCounters,
        stream: NoiseStream,
    ) -> Result<ModelTrace> {
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(upto);
        for (i, layer) in self.layers[..upto].iter().enumerate() {
            let input = traces.last().map_or(x, |t| &t.out);
            let wq = weights.as_ref().map(|w| &w[i]);
            let t = forward_layer(layer, input, wq, counters, stream.derive(TAG_ACT + i as u64))?;
            traces.push(t);
        }
        Ok(ModelTrace {
            version: self.version,
            layers: traces,
            weights,
        })
    }
}

/// Retained activations of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    version: u64,
    pub(crate) layers: Vec<LayerTrace>,
    pub(crate) weights: Option<Arc<Vec<QuantWeights>>>,
}

impl ModelTrace {
    pub fn batch_size(&self) -> usize {
        self.layers.first().map_or(0, |t| t.out.rows())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_output(&self, i: usize) -> &RealTensor {
        &self.layers[i].out
    }

    pub fn precision(&self) -> Precision {
        if self.weights.is_some() {
            Precision::Int8
        } else {
            Precision::Fp32
        }
    }

    /// `goodness[layer][sample]`.
    pub fn goodness(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|t| (0..t.out.rows()).map(|r| goodness(t.out.row(r))).collect())
            .collect()
    }

    pub fn record(&self, sample: usize) -> GoodnessRecord {
        GoodnessRecord {
            goodness: self.layers.iter().map(|t| goodness(t.out.row(sample))).collect(),
        }
    }

    pub(crate) fn check_fresh(&self, model: &FFModel) -> Result<()> {
        if self.version != model.version || self.layers.len() > model.layers.len() {
            return Err(Error::StaleForward);
        }
        Ok(())
    }
}

//! Goodness-based classification.

use super::layer::{infer_layer, Precision, QuantWeights, WeightRounding};
use super::loss::{goodness, loss_neg, loss_pos};
use super::{FFModel, TrainConfig};
use crate::costmeter::OpCounters;
use crate::data::{embed_into, LabeledImage, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::qtensor::RealTensor;
use crate::rng::NoiseStream;

/// Test-set summary. Losses are averaged over layers; the negative loss is
/// taken over every wrong label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub mean_loss_pos: f64,
    pub mean_loss_neg: f64,
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_label(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn weights_for(model: &FFModel, precision: Precision, counters: &OpCounters) -> Result<Option<Vec<QuantWeights>>> {
    Ok(match precision {
        Precision::Int8 => Some(
            model
                .layers()
                .iter()
                .map(|l| QuantWeights::new(l, WeightRounding::Nearest, NoiseStream::new(0), counters))
                .collect::<Result<_>>()?,
        ),
        Precision::Fp32 => None,
    })
}

/// `[layer][candidate]` goodness for all label embeddings of one image.
fn layer_goodness(
    model: &FFModel,
    pixels: &[f32],
    weights: Option<&[QuantWeights]>,
    counters: &OpCounters,
) -> Result<Vec<Vec<f64>>> {
    let w = model.input_width();
    if pixels.len() != w {
        return Err(Error::Shape(format!("image has {} values, model expects {w}", pixels.len())));
    }
    let mut x = Vec::with_capacity(NUM_CLASSES * w);
    for label in 0..NUM_CLASSES {
        let start = x.len();
        x.extend_from_slice(pixels);
        embed_into(&mut x[start..], label)?;
    }
    let mut h = RealTensor::from_raw(vec![NUM_CLASSES, w], x);
    let mut out = Vec::with_capacity(model.num_layers());
    for (i, layer) in model.layers().iter().enumerate() {
        h = infer_layer(layer, &h, weights.map(|ws| &ws[i]), counters)?;
        out.push((0..NUM_CLASSES).map(|r| goodness(h.row(r))).collect());
    }
    Ok(out)
}

fn summed(per_layer: &[Vec<f64>], skip_first: bool) -> Vec<f64> {
    let skip = usize::from(skip_first && per_layer.len() > 1);
    (0..NUM_CLASSES)
        .map(|c| per_layer[skip..].iter().map(|l| l[c]).sum())
        .collect()
}

/// Total goodness per candidate label.
pub fn candidate_goodness(
    model: &FFModel,
    pixels: &[f32],
    precision: Precision,
    skip_first_layer: bool,
    counters: &OpCounters,
) -> Result<Vec<f64>> {
    let weights = weights_for(model, precision, counters)?;
    let per_layer = layer_goodness(model, pixels, weights.as_deref(), counters)?;
    Ok(summed(&per_layer, skip_first_layer))
}

pub fn predict(model: &FFModel, pixels: &[f32], cfg: &TrainConfig) -> Result<usize> {
    let scores = candidate_goodness(
        model,
        pixels,
        cfg.precision,
        cfg.goodness_skip_first_layer,
        &OpCounters::new(),
    )?;
    Ok(argmax_label(&scores))
}

pub fn evaluate(
    model: &FFModel,
    images: &[LabeledImage],
    cfg: &TrainConfig,
    counters: &OpCounters,
) -> Result<EvalSummary> {
    let weights = weights_for(model, cfg.precision, counters)?;
    let layers = model.num_layers() as f64;
    let (mut correct, mut lp, mut ln) = (0usize, 0.0f64, 0.0f64);
    for img in images {
        let per_layer = layer_goodness(model, &img.pixels, weights.as_deref(), counters)?;
        let truth = img.label as usize;
        if argmax_label(&summed(&per_layer, cfg.goodness_skip_first_layer)) == truth {
            correct += 1;
        }
        for g in &per_layer {
            lp += loss_pos(g[truth], cfg.theta) / layers;
            let wrong: f64 = (0..NUM_CLASSES)
                .filter(|&c| c != truth)
                .map(|c| loss_neg(g[c], cfg.theta))
                .sum();
            ln += wrong / ((NUM_CLASSES - 1) as f64 * layers);
        }
    }
    let total = images.len();
    let n = total.max(1) as f64;
    let summary = EvalSummary {
        correct,
        total,
        accuracy: correct as f64 / n,
        mean_loss_pos: lp / n,
        mean_loss_neg: ln / n,
    };
    if !summary.mean_loss_pos.is_finite() || !summary.mean_loss_neg.is_finite() {
        return Err(Error::Numeric("non-finite evaluation loss".into()));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::super::layer::{Activation, DenseLayer};
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax_label(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_label(&[0.0; 10]), 0);
    }

    #[test]
    fn zero_model_predicts_label_zero() {
        let layers = vec![
            DenseLayer::zeros(20, 8, Activation::Relu, false),
            DenseLayer::zeros(8, 8, Activation::Relu, true),
        ];
        let model = FFModel::from_layers(layers).unwrap();
        let px = vec![0.5f32; 20];
        for precision in [Precision::Fp32, Precision::Int8] {
            let cfg = TrainConfig {
                precision,
                ..TrainConfig::default()
            };
            assert_eq!(predict(&model, &px, &cfg).unwrap(), 0);
        }
    }

    #[test]
    fn scaling_activations_keeps_argmax() {
        // Scaling every layer's parameters by 3 scales every activation by 3
        // since later inputs are normalized.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model = FFModel::new(&[20, 12, 12], true, &mut rng).unwrap();
        let px: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let c = OpCounters::new();
        let base = candidate_goodness(&model, &px, Precision::Fp32, false, &c).unwrap();
        let mut scaled_model = model.clone();
        for i in 0..scaled_model.num_layers() {
            let l = scaled_model.layer_mut(i);
            let w: Vec<f32> = l.weights.data().iter().map(|v| v * 3.0).collect();
            l.weights = RealTensor::matrix(l.fan_out(), l.fan_in(), w).unwrap();
            l.bias.iter_mut().for_each(|b| *b *= 3.0);
        }
        let scaled = candidate_goodness(&scaled_model, &px, Precision::Fp32, false, &c).unwrap();
        assert_eq!(argmax_label(&base), argmax_label(&scaled));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let model = FFModel::new(&[20, 4], true, &mut rng).unwrap();
        assert!(predict(&model, &[0.0; 19], &TrainConfig::default()).is_err());
    }
}

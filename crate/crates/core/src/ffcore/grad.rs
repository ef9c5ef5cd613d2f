//! Local and look-ahead gradients.
//!
//! The look-ahead objective of layer `i` is `L_i + lambda * sum_{j>i} L_j`.
//! In chained mode the later-layer terms are differentiated through the
//! forward computation of layers `i+1..=j`. One reverse sweep serves every
//! layer: with `u_k = d(sum_{j>k} L_j)/dy_k`, `u_{last} = 0` and
//! `u_{k-1} = J_k^T (dL_k/dy_k + u_k)`, where `J_k` is layer `k`'s Jacobian
//! w.r.t. its raw input. Detached mode drops the later terms.

use serde::{Deserialize, Serialize};

use super::layer::{forward_layer, input_grad, weight_grad, DenseLayer, LayerTrace, Precision, QuantWeights};
use super::loss::{goodness, loss_slope};
use super::{FFModel, ModelTrace, TAG_ACT, TAG_CHAIN, TAG_WGRAD};
use crate::costmeter::OpCounters;
use crate::data::Polarity;
use crate::error::{Error, Result};
use crate::qtensor::RealTensor;
use crate::rng::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookaheadMode {
    Chained,
    Detached,
}

/// `dL/dy` for the mean per-sample loss of one layer: `dL/dG * 2y / B`.
pub(crate) fn output_grad(trace: &LayerTrace, polarity: Polarity, theta: f64) -> RealTensor {
    let y = &trace.out;
    let (b, n) = (y.rows(), y.cols());
    let mut g = vec![0.0f32; b * n];
    for r in 0..b {
        let row = y.row(r);
        let coeff = (2.0 * loss_slope(polarity, goodness(row), theta) / b as f64) as f32;
        for (gv, &yv) in g[r * n..(r + 1) * n].iter_mut().zip(row) {
            *gv = coeff * yv;
        }
    }
    RealTensor::from_raw(vec![b, n], g)
}

fn add_scaled(a: &RealTensor, b: &RealTensor, s: f32) -> RealTensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + s * y).collect();
    RealTensor::from_raw(a.shape().to_vec(), data)
}

/// Output-side gradient `dL_new(i)/dy_i` for every layer `i >= from`.
pub(crate) fn lookahead_output_grads(
    model: &FFModel,
    trace: &ModelTrace,
    from: usize,
    polarity: Polarity,
    theta: f64,
    lambda: f64,
    mode: LookaheadMode,
    counters: &OpCounters,
    stream: NoiseStream,
) -> Result<Vec<RealTensor>> {
    let n = trace.layers.len();
    let local: Vec<RealTensor> = trace.layers[from..]
        .iter()
        .map(|t| output_grad(t, polarity, theta))
        .collect();
    if mode == LookaheadMode::Detached || lambda == 0.0 || n - from < 2 {
        return Ok(local);
    }

    // Reverse sweep: later[k - from] holds u_k.
    let mut later: Vec<Option<RealTensor>> = vec![None; n - from];
    for k in (from + 1..n).rev() {
        let total = match &later[k - from] {
            Some(u) => add_scaled(&local[k - from], u, 1.0),
            None => local[k - from].clone(),
        };
        let wq = trace.weights.as_ref().map(|w| &w[k]);
        let u = input_grad(
            &model.layers[k],
            &trace.layers[k],
            &total,
            wq,
            counters,
            stream.derive(TAG_CHAIN + k as u64),
        )?;
        later[k - 1 - from] = Some(u);
    }
    let lam = lambda as f32;
    Ok(local
        .into_iter()
        .zip(later)
        .map(|(g, u)| match u {
            Some(u) => add_scaled(&g, &u, lam),
            None => g,
        })
        .collect())
}

/// Gradient of the mean per-sample FF loss of a single layer w.r.t. its
/// weights and bias. `x_batch` is the raw layer input; the layer normalizes
/// it if configured to. The input gradient is never formed.
pub fn local_gradient(
    layer: &DenseLayer,
    x_batch: &RealTensor,
    polarity: Polarity,
    theta: f64,
    precision: Precision,
    counters: &OpCounters,
    stream: NoiseStream,
) -> Result<(RealTensor, Vec<f32>)> {
    let wq = match precision {
        Precision::Int8 => Some(QuantWeights::new(
            layer,
            super::WeightRounding::Nearest,
            stream.derive(super::TAG_WEIGHTS),
            counters,
        )?),
        Precision::Fp32 => None,
    };
    let trace = forward_layer(layer, x_batch, wq.as_ref(), counters, stream.derive(TAG_ACT))?;
    let g = output_grad(&trace, polarity, theta);
    weight_grad(layer, &trace, &g, counters, stream.derive(TAG_WGRAD))
}

/// Look-ahead gradient for layer `layer_index` from a retained forward pass.
#[allow(clippy::too_many_arguments)]
pub fn lookahead_gradient(
    model: &FFModel,
    trace: &ModelTrace,
    layer_index: usize,
    lambda: f64,
    theta: f64,
    mode: LookaheadMode,
    polarity: Polarity,
    counters: &OpCounters,
    stream: NoiseStream,
) -> Result<(RealTensor, Vec<f32>)> {
    trace.check_fresh(model)?;
    if layer_index >= trace.layers.len() {
        return Err(Error::IndexOutOfRange {
            index: layer_index,
            layers: trace.layers.len(),
        });
    }
    let grads = lookahead_output_grads(
        model,
        trace,
        layer_index,
        polarity,
        theta,
        lambda,
        mode,
        counters,
        stream,
    )?;
    weight_grad(
        &model.layers[layer_index],
        &trace.layers[layer_index],
        &grads[0],
        counters,
        stream.derive(TAG_WGRAD + layer_index as u64),
    )
}

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costmeter::OpCounters;
use crate::error::{Error, Result};
use crate::linalg;
use crate::qtensor::{
    int8_matmul_nt, int8_matmul_tn, nearest_slice, scale_of, stochastic_slice, QuantizedTensor,
    RealTensor,
};
use crate::rng::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Fp32,
    Int8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// How weights are rounded when their INT8 copy is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRounding {
    Nearest,
    Stochastic,
}

/// Fully connected layer with FP32 master parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_out x fan_in`.
    pub weights: RealTensor,
    pub bias: Vec<f32>,
    pub activation: Activation,
    /// Scale each input row to unit L2 norm before the affine map.
    pub normalize_input: bool,
}

impl DenseLayer {
    /// Uniform `±1/sqrt(fan_in)` weights and zero bias.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        normalize_input: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weights: RealTensor::from_raw(vec![fan_out, fan_in], data),
            bias: vec![0.0; fan_out],
            activation,
            normalize_input,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation, normalize_input: bool) -> Self {
        Self {
            weights: RealTensor::zeros(vec![fan_out, fan_in]),
            bias: vec![0.0; fan_out],
            activation,
            normalize_input,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && crate::qtensor::all_finite(&self.bias)
    }

    /// `W -= lr * gw; b -= lr * gb`.
    pub fn sgd_step(&mut self, gw: &RealTensor, gb: &[f32], lr: f32) {
        for (w, g) in self.weights.data_mut().iter_mut().zip(gw.data()) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }

    /// Runs the layer on a batch and returns its activations.
    pub fn forward(
        &self,
        x: &RealTensor,
        precision: Precision,
        counters: &OpCounters,
        stream: NoiseStream,
    ) -> Result<RealTensor> {
        let wq = match precision {
            Precision::Int8 => Some(QuantWeights::new(self, WeightRounding::Nearest, stream, counters)?),
            Precision::Fp32 => None,
        };
        Ok(forward_layer(self, x, wq.as_ref(), counters, stream)?.out)
    }
}

/// INT8 copy of a layer's weights taken at the start of a step.
#[derive(Debug)]
pub(crate) struct QuantWeights {
    pub q: QuantizedTensor,
    transposed: OnceLock<QuantizedTensor>,
}

impl QuantWeights {
    pub fn new(
        layer: &DenseLayer,
        rounding: WeightRounding,
        stream: NoiseStream,
        counters: &OpCounters,
    ) -> Result<Self> {
        let w = &layer.weights;
        let scale = scale_of(w.data())?;
        let data = match rounding {
            WeightRounding::Nearest => nearest_slice(w.data(), scale),
            WeightRounding::Stochastic => stochastic_slice(w.data(), scale, stream),
        };
        counters.record_quantize(w.len());
        Ok(Self {
            q: QuantizedTensor::new(w.shape().to_vec(), data, scale)?,
            transposed: OnceLock::new(),
        })
    }

    /// `fan_in x fan_out` copy, built on first use.
    pub fn transposed(&self) -> &QuantizedTensor {
        self.transposed.get_or_init(|| self.q.transpose())
    }
}

pub(crate) fn quantize_rows_stochastic(
    x: &RealTensor,
    stream: NoiseStream,
    counters: &OpCounters,
) -> Result<QuantizedTensor> {
    let scale = scale_of(x.data())?;
    counters.record_quantize(x.len());
    QuantizedTensor::new(x.shape().to_vec(), stochastic_slice(x.data(), scale, stream), scale)
}

/// Retained state of one layer's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    /// Layer input after optional normalization (`batch x fan_in`).
    pub input: RealTensor,
    /// Per-row `1/||x||` when normalized (0 for zero rows).
    pub inv_norms: Option<Vec<f32>>,
    /// INT8 copy of `input` used by the forward GEMM.
    pub input_q: Option<QuantizedTensor>,
    /// Post-activation output (`batch x fan_out`).
    pub out: RealTensor,
}

pub(crate) fn normalize_rows(x: &RealTensor) -> (RealTensor, Vec<f32>) {
    let cols = x.cols();
    let mut data = x.data().to_vec();
    let mut inv = Vec::with_capacity(x.rows());
    for row in data.chunks_exact_mut(cols.max(1)) {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        let s = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        row.iter_mut().for_each(|v| *v *= s);
        inv.push(s);
    }
    (RealTensor::from_raw(x.shape().to_vec(), data), inv)
}

fn check_input(layer: &DenseLayer, x: &RealTensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != layer.fan_in() {
        return Err(Error::Shape(format!(
            "layer expects batch x {}, got {:?}",
            layer.fan_in(),
            x.shape()
        )));
    }
    Ok(())
}

fn activate(layer: &DenseLayer, mut z: Vec<f32>) -> Vec<f32> {
    let n = layer.fan_out();
    for row in z.chunks_exact_mut(n.max(1)) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
            if layer.activation == Activation::Relu {
                *v = v.max(0.0);
            }
        }
    }
    z
}

/// Forward pass of one layer. `wq` selects INT8 mode.
pub(crate) fn forward_layer(
    layer: &DenseLayer,
    x: &RealTensor,
    wq: Option<&QuantWeights>,
    counters: &OpCounters,
    stream: NoiseStream,
) -> Result<LayerTrace> {
    check_input(layer, x)?;
    let (input, inv_norms) = if layer.normalize_input {
        let (xn, inv) = normalize_rows(x);
        (xn, Some(inv))
    } else {
        (x.clone(), None)
    };
    let (b, n, k) = (input.rows(), layer.fan_out(), layer.fan_in());
    let (z, input_q) = match wq {
        Some(wq) => {
            let xq = quantize_rows_stochastic(&input, stream, counters)?;
            let acc = int8_matmul_nt(&xq, &wq.q, counters)?;
            (acc.dequantize().into_data(), Some(xq))
        }
        None => (
            linalg::matmul_nt(input.data(), layer.weights.data(), b, k, n, counters),
            None,
        ),
    };
    let out = RealTensor::from_raw(vec![b, n], activate(layer, z));
    Ok(LayerTrace {
        input,
        inv_norms,
        input_q,
        out,
    })
}

/// Inference forward. INT8 mode rounds activations to nearest so scoring
/// is deterministic.
pub(crate) fn infer_layer(
    layer: &DenseLayer,
    x: &RealTensor,
    wq: Option<&QuantWeights>,
    counters: &OpCounters,
) -> Result<RealTensor> {
    check_input(layer, x)?;
    let input = if layer.normalize_input {
        normalize_rows(x).0
    } else {
        x.clone()
    };
    let (b, n, k) = (input.rows(), layer.fan_out(), layer.fan_in());
    let z = match wq {
        Some(wq) => {
            let scale = scale_of(input.data())?;
            counters.record_quantize(input.len());
            let xq = QuantizedTensor::new(input.shape().to_vec(), nearest_slice(input.data(), scale), scale)?;
            int8_matmul_nt(&xq, &wq.q, counters)?.dequantize().into_data()
        }
        None => linalg::matmul_nt(input.data(), layer.weights.data(), b, k, n, counters),
    };
    Ok(RealTensor::from_raw(vec![b, n], activate(layer, z)))
}

/// Gradient at the pre-activation from a gradient at the output.
pub(crate) fn mask_grad(layer: &DenseLayer, trace: &LayerTrace, g_out: &RealTensor) -> RealTensor {
    let mut g = g_out.data().to_vec();
    if layer.activation == Activation::Relu {
        for (gv, &y) in g.iter_mut().zip(trace.out.data()) {
            if y <= 0.0 {
                *gv = 0.0;
            }
        }
    }
    RealTensor::from_raw(g_out.shape().to_vec(), g)
}

/// Weight and bias gradients given the gradient at the layer output.
/// INT8 mode quantizes the masked gradient stochastically and reuses the
/// INT8 input from the forward pass.
pub(crate) fn weight_grad(
    layer: &DenseLayer,
    trace: &LayerTrace,
    g_out: &RealTensor,
    counters: &OpCounters,
    stream: NoiseStream,
) -> Result<(RealTensor, Vec<f32>)> {
    let g = mask_grad(layer, trace, g_out);
    let (b, n, k) = (g.rows(), layer.fan_out(), layer.fan_in());
    let mut gb = vec![0.0f32; n];
    for row in g.data().chunks_exact(n.max(1)) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let gw = match &trace.input_q {
        Some(xq) => {
            let gq = quantize_rows_stochastic(&g, stream, counters)?;
            int8_matmul_tn(&gq, xq, counters)?
                .dequantize()
                .into_data()
        }
        None => linalg::matmul_tn(g.data(), trace.input.data(), b, n, k, counters),
    };
    Ok((RealTensor::from_raw(vec![n, k], gw), gb))
}

/// Gradient w.r.t. the layer's raw (pre-normalization) input.
pub(crate) fn input_grad(
    layer: &DenseLayer,
    trace: &LayerTrace,
    g_out: &RealTensor,
    wq: Option<&QuantWeights>,
    counters: &OpCounters,
    stream: NoiseStream,
) -> Result<RealTensor> {
    let g = mask_grad(layer, trace, g_out);
    let (b, n, k) = (g.rows(), layer.fan_out(), layer.fan_in());
    let mut gx = match wq {
        Some(wq) => {
            let gq = quantize_rows_stochastic(&g, stream, counters)?;
            int8_matmul_nt(&gq, wq.transposed(), counters)?
                .dequantize()
                .into_data()
        }
        None => linalg::matmul_nn(g.data(), layer.weights.data(), b, n, k, counters),
    };
    if let Some(inv) = &trace.inv_norms {
        // d(x/|x|) = (g - xhat (xhat . g)) / |x|
        for ((grow, xrow), &s) in gx
            .chunks_exact_mut(k.max(1))
            .zip(trace.input.data().chunks_exact(k.max(1)))
            .zip(inv)
        {
            let dot: f32 = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
            for (gv, &xv) in grow.iter_mut().zip(xrow) {
                *gv = (*gv - xv * dot) * s;
            }
        }
    }
    Ok(RealTensor::from_raw(vec![b, k], gx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: Vec<f32>, n: usize, k: usize) -> DenseLayer {
        DenseLayer {
            weights: RealTensor::matrix(n, k, w).unwrap(),
            bias: vec![0.0; n],
            activation: Activation::Relu,
            normalize_input: false,
        }
    }

    #[test]
    fn identity_forward() {
        let l = layer(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = RealTensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let y = l.forward(&x, Precision::Fp32, &OpCounters::new(), NoiseStream::new(0)).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn negative_identity_clamps() {
        let l = layer(vec![-1.0, 0.0, 0.0, -1.0], 2, 2);
        let x = RealTensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        for p in [Precision::Fp32, Precision::Int8] {
            let y = l.forward(&x, p, &OpCounters::new(), NoiseStream::new(0)).unwrap();
            assert_eq!(y.data(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn normalization_maps_zero_to_zero() {
        let x = RealTensor::matrix(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let (xn, inv) = normalize_rows(&x);
        assert_eq!(xn.data(), &[0.6, 0.8, 0.0, 0.0]);
        assert_eq!(inv, vec![0.2, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let l = layer(vec![1.0; 6], 2, 3);
        let x = RealTensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            l.forward(&x, Precision::Fp32, &OpCounters::new(), NoiseStream::new(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn int8_forward_has_no_fp32_gemm() {
        let mut rng = crate::rng::seeded_rng(0, 0);
        let l = DenseLayer::init(20, 8, Activation::Relu, true, &mut rng);
        let x = RealTensor::matrix(4, 20, (0..80).map(|i| (i as f32).cos()).collect()).unwrap();
        let c = OpCounters::new();
        l.forward(&x, Precision::Int8, &c, NoiseStream::new(1)).unwrap();
        let s = c.snapshot();
        assert_eq!(s.fp32_fmul, 0);
        assert_eq!(s.int8_mul, 4 * 8 * 20);
        assert_eq!(s.cmp32, (20 * 8 + 4 * 20) as u64);
    }
}

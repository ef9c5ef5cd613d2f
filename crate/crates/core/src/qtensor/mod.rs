//! Per-tensor symmetric uniform quantization and INT8 matrix products.
//!
//! Quantized values live in `[-127, 127]`; `-128` is never produced, so the
//! integer range is closed under negation. One positive `scale` per tensor
//! maps an integer step back to real units.

mod gemm;

use crate::costmeter::OpCounters;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

pub const QMAX: i32 = 127;

/// Largest inner dimension for which an INT32 accumulator cannot overflow
/// (`127 * 127 * 130_000 < 2^31`).
pub const ACCUM_BOUND: usize = 130_000;

/// Dense FP32 tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl RealTensor {
    /// Checked constructor: the data length must match the shape and every
    /// value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite value {} at index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Unchecked constructor for kernel outputs.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Transpose of a matrix view (`rows() x cols()`).
    pub fn transpose(&self) -> RealTensor {
        let (r, c) = (self.rows(), self.cols());
        RealTensor::from_raw(vec![c, r], transpose(&self.data, r, c))
    }
}

/// INT8 payload with one real scale per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    data: Vec<i8>,
    scale: f32,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, scale: f32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidScale(scale));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.contains(&i8::MIN) {
            return Err(Error::InvalidTensor("-128 is outside the symmetric range".into()));
        }
        Ok(Self { shape, data, scale })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn transpose(&self) -> QuantizedTensor {
        let (r, c) = (self.rows(), self.cols());
        QuantizedTensor {
            shape: vec![c, r],
            data: transpose(&self.data, r, c),
            scale: self.scale,
        }
    }
}

/// Exact INT32 GEMM result; `scale` is the product of the operand scales.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    scale: f32,
}

impl AccumTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn dequantize(&self) -> RealTensor {
        let s = self.scale;
        RealTensor::from_raw(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f32 * s).collect(),
        )
    }
}

pub(crate) fn transpose<T: Copy + Default>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::default(); src.len()];
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

/// `max|t| / 127`, or 1.0 for an all-zero tensor.
pub fn compute_scale(t: &RealTensor) -> Result<f32> {
    scale_of(t.data())
}

pub(crate) fn scale_of(data: &[f32]) -> Result<f32> {
    let max = max_abs_bits(data);
    if max >= INF_BITS {
        return Err(Error::InvalidTensor("non-finite value in tensor".into()));
    }
    let max = f32::from_bits(max);
    Ok(if max > 0.0 { max / QMAX as f32 } else { 1.0 })
}

const INF_BITS: u32 = 0x7f80_0000;

/// Largest `|v|` as raw bits. For non-negative floats the bit patterns
/// order like the values, and NaN/inf compare above every finite value.
fn max_abs_bits(data: &[f32]) -> u32 {
    data.iter().fold(0u32, |m, v| m.max(v.to_bits() & 0x7fff_ffff))
}

pub(crate) fn all_finite(data: &[f32]) -> bool {
    max_abs_bits(data) < INF_BITS
}

fn check_scale(scale: f32) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScale(scale))
    }
}

/// Stochastic rounding: `x/scale` rounds up with probability equal to its
/// fractional part. Element `i` draws its variate from `stream.uniform(i)`.
pub fn quantize_stochastic(
    t: &RealTensor,
    scale: f32,
    stream: NoiseStream,
) -> Result<QuantizedTensor> {
    check_scale(scale)?;
    Ok(QuantizedTensor {
        shape: t.shape.clone(),
        data: stochastic_slice(&t.data, scale, stream),
        scale,
    })
}

pub(crate) fn stochastic_slice(data: &[f32], scale: f32, stream: NoiseStream) -> Vec<i8> {
    let lim = QMAX as f32;
    data.iter()
        .enumerate()
        .map(|(i, &x)| {
            let u = (x / scale).clamp(-lim, lim);
            let mut f = u as i32;
            if f as f32 > u {
                f -= 1;
            }
            let frac = u - f as f32;
            let up = (stream.uniform(i as u64) < frac) as i32;
            (f + up).clamp(-QMAX, QMAX) as i8
        })
        .collect()
}

/// Round-half-away-from-zero quantization.
pub fn quantize_nearest(t: &RealTensor, scale: f32) -> Result<QuantizedTensor> {
    check_scale(scale)?;
    Ok(QuantizedTensor {
        shape: t.shape.clone(),
        data: nearest_slice(&t.data, scale),
        scale,
    })
}

pub(crate) fn nearest_slice(data: &[f32], scale: f32) -> Vec<i8> {
    let mut out = vec![0i8; data.len()];
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: feature checked at runtime.
            unsafe { nearest_avx2(data, scale, &mut out) };
            return out;
        }
    }
    nearest_into(data, scale, &mut out);
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn nearest_avx2(data: &[f32], scale: f32, out: &mut [i8]) {
    nearest_into(data, scale, out)
}

#[inline(always)]
fn nearest_into(data: &[f32], scale: f32, out: &mut [i8]) {
    let lim = (QMAX + 1) as f32;
    for (o, &x) in out.iter_mut().zip(data) {
        // max/min map NaN to a bound, so `u` is always finite and in range.
        let u = (x / scale).max(-lim).min(lim);
        // SAFETY: |u| <= 128.
        let t = unsafe { u.to_int_unchecked::<i32>() };
        let frac = u - t as f32;
        let r = t + (frac >= 0.5) as i32 - (frac <= -0.5) as i32;
        *o = r.clamp(-QMAX, QMAX) as i8;
    }
}

pub fn dequantize(q: &QuantizedTensor) -> RealTensor {
    let s = q.scale;
    RealTensor::from_raw(
        q.shape.clone(),
        q.data.iter().map(|&v| v as f32 * s).collect(),
    )
}

fn check_k(k: usize) -> Result<()> {
    if k > ACCUM_BOUND {
        Err(Error::OverflowRisk {
            k,
            bound: ACCUM_BOUND,
        })
    } else {
        Ok(())
    }
}

/// `a (M x K) * b (K x N)` with INT32 accumulation. Records `M*N*K` 8-bit
/// MULs and ADDs.
pub fn int8_matmul(
    a: &QuantizedTensor,
    b: &QuantizedTensor,
    counters: &OpCounters,
) -> Result<AccumTensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    int8_matmul_nt(a, &b.transpose(), counters)
}

/// `a (M x K) * bt^T` where `bt` is `N x K`. Same accounting as
/// [`int8_matmul`].
pub fn int8_matmul_nt(
    a: &QuantizedTensor,
    bt: &QuantizedTensor,
    counters: &OpCounters,
) -> Result<AccumTensor> {
    if a.shape.len() != 2 || bt.shape.len() != 2 || a.cols() != bt.cols() {
        return Err(Error::Shape(format!(
            "cannot multiply {:?} by transpose of {:?}",
            a.shape, bt.shape
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), bt.rows());
    check_k(k)?;
    let mut out = vec![0i32; m * n];
    gemm::gemm_i8_nt(&a.data, &bt.data, m, n, k, &mut out);
    counters.record_int8_gemm(m, n, k);
    Ok(AccumTensor {
        shape: vec![m, n],
        data: out,
        scale: a.scale * bt.scale,
    })
}

/// `a^T b` for `a: k x m` and `b: k x n`, exact in INT32. Preferred when the
/// shared dimension is short, as for weight gradients over a batch.
pub fn int8_matmul_tn(
    a: &QuantizedTensor,
    b: &QuantizedTensor,
    counters: &OpCounters,
) -> Result<AccumTensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "cannot multiply transpose of {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    check_k(k)?;
    let mut out = vec![0i32; m * n];
    gemm::gemm_i8_tn(&a.data, &b.data, m, n, k, &mut out);
    counters.record_int8_gemm(m, n, k);
    Ok(AccumTensor {
        shape: vec![m, n],
        data: out,
        scale: a.scale * b.scale,
    })
}

//! Weight-gradient histograms over one epoch of batches.

use super::{batch_matrix, BPModel, BpMode, GradientRounding};
use crate::costmeter::OpCounters;
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

pub const HISTOGRAM_BINS: usize = 101;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientHistogram {
    pub layer_index: usize,
    /// `counts.len() + 1` strictly increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
    /// Fourth standardized moment minus 3; 0 when the variance is 0.
    pub excess_kurtosis: f64,
}

impl GradientHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_lo,bin_hi,count` rows prefixed with `tag`.
    pub fn csv_rows(&self, tag: &str) -> String {
        let mut out = String::new();
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{tag},{},{},{c}\n", self.edges[i], self.edges[i + 1]));
        }
        out
    }
}

/// Histogram of layer `layer_index`'s FP32 weight gradients over one pass of
/// `batch_size` batches through `images`, without updating the model. Bins
/// span `[-M, M]` with `M` the largest observed magnitude (1 if all zero).
pub fn gradient_histogram(
    model: &BPModel,
    images: &[LabeledImage],
    batch_size: usize,
    layer_index: usize,
    bins: usize,
) -> Result<GradientHistogram> {
    if layer_index >= model.layers().len() {
        return Err(Error::IndexOutOfRange {
            index: layer_index,
            layers: model.layers().len(),
        });
    }
    if bins == 0 || batch_size == 0 {
        return Err(Error::Config("bins and batch_size must be positive".into()));
    }
    let counters = OpCounters::new();
    let each = |f: &mut dyn FnMut(&[f32])| -> Result<()> {
        for chunk in images.chunks(batch_size) {
            let refs: Vec<&LabeledImage> = chunk.iter().collect();
            let (x, labels) = batch_matrix(&refs);
            let g = model.gradients(&x, &labels, BpMode::Fp32, GradientRounding::Stochastic, &counters, NoiseStream::new(0))?;
            f(g.layers[layer_index].0.data());
        }
        Ok(())
    };

    let (mut n, mut sum, mut lo, mut hi) = (0u64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    each(&mut |g| {
        for &v in g {
            let v = v as f64;
            n += 1;
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    })?;
    if n == 0 {
        return Err(Error::Config("no gradient elements to histogram".into()));
    }
    let mean = sum / n as f64;
    let m = match lo.abs().max(hi.abs()) {
        x if x > 0.0 => x,
        _ => 1.0,
    };
    let width = 2.0 * m / bins as f64;
    let mut counts = vec![0u64; bins];
    let (mut m2, mut m4) = (0.0f64, 0.0f64);
    each(&mut |g| {
        for &v in g {
            let v = v as f64;
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
            let idx = (((v + m) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
    })?;
    let variance = m2 / n as f64;
    let excess_kurtosis = if variance > 0.0 {
        (m4 / n as f64) / (variance * variance) - 3.0
    } else {
        0.0
    };
    Ok(GradientHistogram {
        layer_index,
        edges: (0..=bins).map(|i| -m + i as f64 * width).collect(),
        counts,
        min: lo,
        max: hi,
        mean,
        variance,
        excess_kurtosis,
    })
}

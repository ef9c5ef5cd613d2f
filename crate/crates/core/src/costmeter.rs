//! Operation accounting.
//!
//! Only the two phases that dominate training cost are tallied: GEMM
//! multiply-accumulates and per-element quantization work. Elementwise
//! bias, activation and normalization work is not counted. A MAC costs one
//! MUL plus one ADD of the GEMM's precision; quantizing one element costs
//! one 32-bit CMP (the clamp) and two 32-bit FADD-class ops (scale divide
//! and rounding offset).

use std::fmt;
use std::ops::{Add, AddAssign};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concurrent operation tallies. Clones are independent sinks.
#[derive(Debug, Default)]
pub struct OpCounters {
    int8_mul: AtomicU64,
    int8_add: AtomicU64,
    fp32_fadd: AtomicU64,
    fp32_fmul: AtomicU64,
    cmp32: AtomicU64,
}

/// A plain snapshot of [`OpCounters`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub int8_mul: u64,
    pub int8_add: u64,
    pub fp32_fadd: u64,
    pub fp32_fmul: u64,
    pub cmp32: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_int8_gemm(&self, m: usize, n: usize, k: usize) {
        let macs = (m * n * k) as u64;
        self.int8_mul.fetch_add(macs, Ordering::Relaxed);
        self.int8_add.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn record_fp32_gemm(&self, m: usize, n: usize, k: usize) {
        let macs = (m * n * k) as u64;
        self.fp32_fmul.fetch_add(macs, Ordering::Relaxed);
        self.fp32_fadd.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn record_quantize(&self, elements: usize) {
        let n = elements as u64;
        self.cmp32.fetch_add(n, Ordering::Relaxed);
        self.fp32_fadd.fetch_add(2 * n, Ordering::Relaxed);
    }

    pub fn merge(&self, other: &OpCounts) {
        self.int8_mul.fetch_add(other.int8_mul, Ordering::Relaxed);
        self.int8_add.fetch_add(other.int8_add, Ordering::Relaxed);
        self.fp32_fadd.fetch_add(other.fp32_fadd, Ordering::Relaxed);
        self.fp32_fmul.fetch_add(other.fp32_fmul, Ordering::Relaxed);
        self.cmp32.fetch_add(other.cmp32, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            int8_mul: self.int8_mul.load(Ordering::Relaxed),
            int8_add: self.int8_add.load(Ordering::Relaxed),
            fp32_fadd: self.fp32_fadd.load(Ordering::Relaxed),
            fp32_fmul: self.fp32_fmul.load(Ordering::Relaxed),
            cmp32: self.cmp32.load(Ordering::Relaxed),
        }
    }
}

impl OpCounts {
    /// Multiply-accumulates of either precision.
    pub fn macs(&self) -> u64 {
        self.int8_mul + self.fp32_fmul
    }

    pub fn scaled(&self, factor: u64) -> OpCounts {
        OpCounts {
            int8_mul: self.int8_mul * factor,
            int8_add: self.int8_add * factor,
            fp32_fadd: self.fp32_fadd * factor,
            fp32_fmul: self.fp32_fmul * factor,
            cmp32: self.cmp32 * factor,
        }
    }

    /// Elementwise difference against an earlier snapshot.
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            int8_mul: self.int8_mul - earlier.int8_mul,
            int8_add: self.int8_add - earlier.int8_add,
            fp32_fadd: self.fp32_fadd - earlier.fp32_fadd,
            fp32_fmul: self.fp32_fmul - earlier.fp32_fmul,
            cmp32: self.cmp32 - earlier.cmp32,
        }
    }

    pub fn classes(&self) -> [(&'static str, u64); 5] {
        [
            ("int8_mul", self.int8_mul),
            ("int8_add", self.int8_add),
            ("fp32_fadd", self.fp32_fadd),
            ("fp32_fmul", self.fp32_fmul),
            ("cmp32", self.cmp32),
        ]
    }
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(mut self, rhs: OpCounts) -> OpCounts {
        self += rhs;
        self
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: OpCounts) {
        self.int8_mul += rhs.int8_mul;
        self.int8_add += rhs.int8_add;
        self.fp32_fadd += rhs.fp32_fadd;
        self.fp32_fmul += rhs.fp32_fmul;
        self.cmp32 += rhs.cmp32;
    }
}

/// Training regime being costed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Look-ahead Forward-Forward with INT8 GEMMs.
    FfInt8,
    /// Look-ahead Forward-Forward with FP32 GEMMs.
    FfFp32,
    /// Backpropagation, FP32 throughout.
    BpFp32,
    /// Backpropagation with every gradient tensor quantized to INT8.
    /// GEMMs still run in FP32 on the dequantized values.
    BpInt8,
}

impl CostMode {
    pub fn name(self) -> &'static str {
        match self {
            CostMode::FfInt8 => "ff_int8",
            CostMode::FfFp32 => "ff_fp32",
            CostMode::BpFp32 => "bp_fp32",
            CostMode::BpInt8 => "bp_int8",
        }
    }

    fn is_ff(self) -> bool {
        matches!(self, CostMode::FfInt8 | CostMode::FfFp32)
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff_int8" => Ok(CostMode::FfInt8),
            "ff_fp32" => Ok(CostMode::FfFp32),
            "bp_fp32" => Ok(CostMode::BpFp32),
            "bp_int8" => Ok(CostMode::BpInt8),
            other => Err(Error::Config(format!("unknown cost mode '{other}'"))),
        }
    }
}

/// Architecture and regime for the closed-form cost model.
///
/// For FF modes `widths` lists the input and hidden widths
/// (`[784, 500, 500]`); for BP modes it also ends with the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub widths: Vec<usize>,
    pub batch: usize,
    pub mode: CostMode,
    /// FF only: the look-ahead step back-propagates later-layer losses
    /// through the layer stack (chained mode with a non-zero λ).
    pub lookahead_chain: bool,
}

impl ArchSpec {
    pub fn new(widths: Vec<usize>, batch: usize, mode: CostMode) -> Self {
        Self {
            widths,
            batch,
            mode,
            lookahead_chain: false,
        }
    }

    pub fn with_chain(mut self, chain: bool) -> Self {
        self.lookahead_chain = chain;
        self
    }

    /// Parses a dash-separated width list such as `784-500-500`.
    pub fn parse_widths(arch: &str) -> Result<Vec<usize>> {
        let widths = arch
            .split(['-', 'x', ','])
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Config(format!("malformed architecture '{arch}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "architecture '{arch}' needs at least two widths"
            )));
        }
        Ok(widths)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("architecture needs at least two widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Expected counters for one training minibatch under `spec`.
///
/// FF steps run a positive and a negative pass over the batch. Each pass
/// costs the forward GEMM and the weight-gradient GEMM of every layer; there
/// is no activation-gradient GEMM unless the look-ahead chain is active, in
/// which case each layer after the first is back-propagated through once.
/// BP steps cost forward, weight-gradient, and activation-gradient GEMMs for
/// every layer except the input-gradient of the first.
pub fn analytic_counts(spec: &ArchSpec) -> Result<OpCounts> {
    spec.validate()?;
    let b = spec.batch as u64;
    let layers: Vec<(u64, u64)> = spec
        .widths
        .windows(2)
        .map(|w| (w[0] as u64, w[1] as u64))
        .collect();

    let mut gemm_macs = 0u64;
    let mut quantized = 0u64;
    if spec.mode.is_ff() {
        for (idx, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let per_pass_macs = 2 * b * fan_in * fan_out;
            let mut per_pass_quant = b * fan_in + b * fan_out;
            let mut chain_macs = 0;
            if spec.lookahead_chain && idx >= 1 {
                chain_macs = b * fan_in * fan_out;
                per_pass_quant += b * fan_out;
            }
            gemm_macs += 2 * (per_pass_macs + chain_macs);
            quantized += fan_in * fan_out + 2 * per_pass_quant;
        }
    } else {
        for (idx, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let mut macs = 2 * b * fan_in * fan_out;
            if idx >= 1 {
                macs += b * fan_in * fan_out;
            }
            gemm_macs += macs;
            quantized += b * fan_out + fan_in * fan_out + fan_out;
        }
    }

    let mut counts = OpCounts::default();
    match spec.mode {
        CostMode::FfInt8 => {
            counts.int8_mul = gemm_macs;
            counts.int8_add = gemm_macs;
            counts.cmp32 = quantized;
            counts.fp32_fadd = 2 * quantized;
        }
        CostMode::FfFp32 | CostMode::BpFp32 => {
            counts.fp32_fmul = gemm_macs;
            counts.fp32_fadd = gemm_macs;
        }
        CostMode::BpInt8 => {
            counts.fp32_fmul = gemm_macs;
            counts.fp32_fadd = gemm_macs + 2 * quantized;
            counts.cmp32 = quantized;
        }
    }
    Ok(counts)
}

/// Reference figures printed alongside measured reports for comparison.
/// The network behind them is not fully specified; they are not targets.
pub const PUBLISHED_FF_INT8_MACS: f64 = 23.8e6;
pub const PUBLISHED_BP_MACS: f64 = 898.2e6;

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<(String, OpCounts)>,
    /// FF MACs over BP MACs; `None` when either side is absent or BP is zero.
    pub mac_ratio: Option<f64>,
}

/// Builds the per-mode table and the FF/BP MAC ratio.
///
/// The FF side is the first `ff_*` row and the BP side the first `bp_*`
/// row. FF INT8 is compared on 8-bit MACs, BP on all MACs.
pub fn cost_report(counters_by_mode: &[(String, OpCounts)]) -> CostReport {
    let ff = counters_by_mode.iter().find(|(m, _)| m.starts_with("ff"));
    let bp = counters_by_mode.iter().find(|(m, _)| m.starts_with("bp"));
    let mac_ratio = match (ff, bp) {
        (Some((_, f)), Some((_, b))) if b.macs() > 0 => Some(f.macs() as f64 / b.macs() as f64),
        _ => None,
    };
    CostReport {
        rows: counters_by_mode.to_vec(),
        mac_ratio,
    }
}

impl CostReport {
    /// CSV with header `mode,op_class,count`. Ratios follow as rows whose
    /// mode column is `ratio`; an undefined ratio is written as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,op_class,count\n");
        for (mode, counts) in &self.rows {
            for (class, n) in counts.classes() {
                out.push_str(&format!("{mode},{class},{n}\n"));
            }
        }
        match self.mac_ratio {
            Some(r) => out.push_str(&format!("ratio,ff_over_bp_macs,{r}\n")),
            None => out.push_str("ratio,ff_over_bp_macs,undefined\n"),
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:<10} {:>16}\n", "mode", "op", "count"));
        for (mode, counts) in &self.rows {
            for (class, n) in counts.classes() {
                if n > 0 {
                    out.push_str(&format!("{mode:<10} {class:<10} {:>16}\n", human(n)));
                }
            }
        }
        match self.mac_ratio {
            Some(r) => out.push_str(&format!("FF/BP MAC ratio: {:.4} ({:.1}%)\n", r, 100.0 * r)),
            None => out.push_str("FF/BP MAC ratio: undefined (no BP MACs)\n"),
        }
        out.push_str(&format!(
            "published reference: FF-INT8 {:.1}M 8-bit MACs vs BP {:.1}M MACs ({:.1}%), different network\n",
            PUBLISHED_FF_INT8_MACS / 1e6,
            PUBLISHED_BP_MACS / 1e6,
            100.0 * PUBLISHED_FF_INT8_MACS / PUBLISHED_BP_MACS
        ));
        out
    }
}

fn human(n: u64) -> String {
    match n {
        n if n >= 1_000_000 => format!("{n} ({:.1}M)", n as f64 / 1e6),
        n if n >= 1_000 => format!("{n} ({:.1}K)", n as f64 / 1e3),
        n => n.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_bp_fp32_counts_by_hand() {
        let spec = ArchSpec::new(vec![1, 1], 1, CostMode::BpFp32);
        let c = analytic_counts(&spec).unwrap();
        // forward 1 MAC + weight gradient 1 MAC, no input gradient
        assert_eq!(c.fp32_fmul, 2);
        assert_eq!(c.fp32_fadd, 2);
        assert_eq!(c.int8_mul, 0);
        assert_eq!(c.cmp32, 0);
    }

    #[test]
    fn ff_drops_the_activation_gradient_chain() {
        // Per sample and pass, FF does forward + weight-gradient, BP adds the
        // activation-gradient chain.
        let widths = vec![20, 16, 12, 8];
        let ff = analytic_counts(&ArchSpec::new(widths.clone(), 1, CostMode::FfFp32)).unwrap();
        let bp = analytic_counts(&ArchSpec::new(widths, 1, CostMode::BpFp32)).unwrap();
        let ff_per_pass = ff.macs() / 2;
        assert!(ff_per_pass < bp.macs());
    }

    #[test]
    fn quantization_phase_only_in_quantized_modes() {
        let w = vec![8, 4, 3];
        for mode in [CostMode::FfFp32, CostMode::BpFp32] {
            assert_eq!(analytic_counts(&ArchSpec::new(w.clone(), 4, mode)).unwrap().cmp32, 0);
        }
        for mode in [CostMode::FfInt8, CostMode::BpInt8] {
            assert!(analytic_counts(&ArchSpec::new(w.clone(), 4, mode)).unwrap().cmp32 > 0);
        }
        let ff = analytic_counts(&ArchSpec::new(w, 4, CostMode::FfInt8)).unwrap();
        assert_eq!(ff.fp32_fmul, 0);
    }

    #[test]
    fn chain_adds_backward_gemms_after_first_layer() {
        let w = vec![10, 6, 5];
        let plain = analytic_counts(&ArchSpec::new(w.clone(), 3, CostMode::FfInt8)).unwrap();
        let chained =
            analytic_counts(&ArchSpec::new(w, 3, CostMode::FfInt8).with_chain(true)).unwrap();
        assert_eq!(chained.int8_mul - plain.int8_mul, 2 * 3 * 6 * 5);
        assert_eq!(chained.cmp32 - plain.cmp32, 2 * 3 * 5);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(analytic_counts(&ArchSpec::new(vec![5], 1, CostMode::BpFp32)).is_err());
        assert!(analytic_counts(&ArchSpec::new(vec![5, 0], 1, CostMode::BpFp32)).is_err());
        assert!(analytic_counts(&ArchSpec::new(vec![5, 2], 0, CostMode::BpFp32)).is_err());
    }

    #[test]
    fn parse_widths_accepts_dash_lists() {
        assert_eq!(ArchSpec::parse_widths("784-500-500").unwrap(), vec![784, 500, 500]);
        assert!(ArchSpec::parse_widths("784").is_err());
        assert!(ArchSpec::parse_widths("784-abc").is_err());
        assert!(ArchSpec::parse_widths("784--10").is_err());
    }

    #[test]
    fn equal_counters_give_unit_ratio() {
        let c = OpCounts {
            fp32_fmul: 10,
            fp32_fadd: 10,
            ..Default::default()
        };
        let r = cost_report(&[("ff_fp32".into(), c), ("bp_fp32".into(), c)]);
        assert_eq!(r.mac_ratio, Some(1.0));
    }

    #[test]
    fn zero_bp_macs_gives_undefined_ratio() {
        let ff = OpCounts {
            int8_mul: 10,
            ..Default::default()
        };
        let r = cost_report(&[("ff_int8".into(), ff), ("bp_fp32".into(), OpCounts::default())]);
        assert_eq!(r.mac_ratio, None);
        assert!(r.to_csv().ends_with("ratio,ff_over_bp_macs,undefined\n"));
        assert!(r.to_text().contains("undefined"));
    }

    #[test]
    fn shard_merge_matches_single_sink() {
        let single = OpCounters::new();
        let merged = OpCounters::new();
        let shards: Vec<OpCounts> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..4)
                .map(|t| {
                    s.spawn(move || {
                        let c = OpCounters::new();
                        for i in 0..50 {
                            c.record_int8_gemm(t + 1, i + 1, 3);
                            c.record_quantize(i * t);
                            c.record_fp32_gemm(2, t, i);
                        }
                        c.snapshot()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for t in 0..4 {
            for i in 0..50 {
                single.record_int8_gemm(t + 1, i + 1, 3);
                single.record_quantize(i * t);
                single.record_fp32_gemm(2, t, i);
            }
        }
        for s in &shards {
            merged.merge(s);
        }
        assert_eq!(merged.snapshot(), single.snapshot());
    }

    #[test]
    fn shared_sink_is_thread_safe() {
        let c = OpCounters::new();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        c.record_int8_gemm(1, 1, 1);
                    }
                });
            }
        });
        assert_eq!(c.snapshot().int8_mul, 4000);
    }
}

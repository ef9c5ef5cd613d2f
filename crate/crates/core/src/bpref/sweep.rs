//! FP32 versus naive-INT8 accuracy across network depths.

use super::{train_bp, BPModel, BpConfig, BpMode, HIDDEN_WIDTH};
use crate::costmeter::OpCounters;
use crate::data::Dataset;
use crate::error::Result;
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub depth: usize,
    /// Final test accuracy as a fraction.
    pub acc_fp32: f64,
    pub acc_int8: f64,
}

impl SweepRow {
    /// `acc_int8 - acc_fp32` in percentage points.
    pub fn diff(&self) -> f64 {
        100.0 * (self.acc_int8 - self.acc_fp32)
    }
}

/// Trains a fresh model per depth and mode from the same initial weights.
/// `on_row` sees each row as it completes.
pub fn depth_sweep(
    depths: &[usize],
    data: &Dataset,
    cfg: &BpConfig,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let input = data.train.first().map_or(0, |i| i.pixels.len());
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let init = BPModel::new(input, &vec![HIDDEN_WIDTH; depth], &mut seeded_rng(cfg.seed, depth as u64))?;
        let mut acc = [0.0; 2];
        for (slot, mode) in [BpMode::Fp32, BpMode::Int8Naive].into_iter().enumerate() {
            let mut model = init.clone();
            let log = train_bp(&mut model, data, cfg, mode, &OpCounters::new(), &mut ())?;
            acc[slot] = match log.test_rows().last() {
                Some(r) => r.accuracy,
                None => model.accuracy(&data.test, &OpCounters::new())?.0,
            };
        }
        let row = SweepRow {
            depth,
            acc_fp32: acc[0],
            acc_int8: acc[1],
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// `depth,acc_fp32,acc_int8,diff` with accuracies in percent.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("depth,acc_fp32,acc_int8,diff\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.depth,
            100.0 * r.acc_fp32,
            100.0 * r.acc_int8,
            r.diff()
        ));
    }
    out
}

//! Per-epoch training metrics and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::costmeter::OpCounts;
use crate::data::Split;
use crate::error::{Error, Result};

/// Bumped whenever either CSV layout changes.
pub const METRICS_FORMAT_VERSION: u32 = 1;

pub const METRICS_HEADER: &str = "epoch,split,accuracy,mean_loss_pos,mean_loss_neg,lambda,wall_ms";
pub const COUNTERS_HEADER: &str = "epoch,split,int8_mul,int8_add,fp32_fadd,fp32_fmul,cmp32";

/// One row of the metrics log.
///
/// For FF `train` rows, `accuracy` is the fraction of images whose positive
/// sample had higher total goodness than its negative sample; `test` rows
/// hold classification accuracy. For BP, `mean_loss_pos` carries the
/// cross-entropy and `mean_loss_neg` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub accuracy: f64,
    pub mean_loss_pos: f64,
    pub mean_loss_neg: f64,
    pub lambda: f64,
    pub wall_ms: u64,
    /// Operation counts recorded during the epoch (train rows only).
    pub counters: OpCounts,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn test_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.split == Split::Test)
    }

    /// First epoch (1-based count of epochs run) whose test accuracy
    /// reaches `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.test_rows().find(|r| r.accuracy >= threshold).map(|r| r.epoch + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.split, r.accuracy, r.mean_loss_pos, r.mean_loss_neg, r.lambda, r.wall_ms
            );
        }
        out
    }

    pub fn counters_csv(&self) -> String {
        let mut out = String::from(COUNTERS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let c = &r.counters;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.split, c.int8_mul, c.int8_add, c.fp32_fadd, c.fp32_fmul, c.cmp32
            );
        }
        out
    }

    /// Parses a metrics CSV written by [`MetricsLog::to_csv`]. Counter
    /// columns are not part of that file and come back as zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != METRICS_HEADER {
            return Err(Error::Config(format!("unexpected metrics header {header:?}")));
        }
        let bad = |what: &str| Error::Config(format!("malformed metrics field {what}"));
        let mut log = MetricsLog::default();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).ok_or_else(|| bad("count"));
            log.push(MetricsRow {
                epoch: f(0)?.parse().map_err(|_| bad("epoch"))?,
                split: match f(1)? {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    _ => return Err(bad("split")),
                },
                accuracy: f(2)?.parse().map_err(|_| bad("accuracy"))?,
                mean_loss_pos: f(3)?.parse().map_err(|_| bad("mean_loss_pos"))?,
                mean_loss_neg: f(4)?.parse().map_err(|_| bad("mean_loss_neg"))?,
                lambda: f(5)?.parse().map_err(|_| bad("lambda"))?,
                wall_ms: f(6)?.parse().map_err(|_| bad("wall_ms"))?,
                counters: OpCounts::default(),
            });
        }
        Ok(log)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        std::fs::write(dir.join("counters.csv"), self.counters_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, split: Split, acc: f64) -> MetricsRow {
        MetricsRow {
            epoch,
            split,
            accuracy: acc,
            mean_loss_pos: 0.25,
            mean_loss_neg: 1.0 / 3.0,
            lambda: 0.001 * epoch as f64,
            wall_ms: 0,
            counters: OpCounts {
                int8_mul: 7,
                ..Default::default()
            },
        }
    }

    #[test]
    fn golden_csv() {
        let log = MetricsLog {
            rows: vec![row(0, Split::Train, 0.5), row(0, Split::Test, 0.875)],
        };
        let want = "epoch,split,accuracy,mean_loss_pos,mean_loss_neg,lambda,wall_ms\n\
                    0,train,0.5,0.25,0.3333333333333333,0,0\n\
                    0,test,0.875,0.25,0.3333333333333333,0,0\n";
        assert_eq!(log.to_csv(), want);
        assert!(log.counters_csv().starts_with(COUNTERS_HEADER));
        assert!(log.counters_csv().contains("0,test,7,0,0,0,0"));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let log = MetricsLog {
            rows: (0..5).map(|e| row(e, Split::Test, 0.1 * e as f64 + 1e-17)).collect(),
        };
        let back = MetricsLog::from_csv(&log.to_csv()).unwrap();
        assert_eq!(back.to_csv(), log.to_csv());
        assert_eq!(back.rows[3].accuracy, log.rows[3].accuracy);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(MetricsLog::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn epochs_to_reach_counts_from_one() {
        let log = MetricsLog {
            rows: vec![row(0, Split::Test, 0.5), row(1, Split::Test, 0.9), row(2, Split::Test, 0.95)],
        };
        assert_eq!(log.epochs_to_reach(0.88), Some(2));
        assert_eq!(log.epochs_to_reach(0.99), None);
    }
}

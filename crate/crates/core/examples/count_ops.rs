//! Closed-form operation counts for one training step, checked against an
//! instrumented step, and the FF/BP MAC ratio.
//!
//!     cargo run --release --example count_ops -- 784-500-500-500-10 10

use ffint8::cli::instrumented_step;
use ffint8::costmeter::{analytic_counts, cost_report, ArchSpec, CostMode};

fn main() -> ffint8::Result<()> {
    let mut args = std::env::args().skip(1);
    let arch = args.next().unwrap_or_else(|| "784-500-500-500-10".into());
    let batch: usize = args.next().map_or(Ok(10), |b| b.parse()).expect("batch must be an integer");
    let widths = ArchSpec::parse_widths(&arch)?;

    let mut rows = Vec::new();
    for mode in [CostMode::FfInt8, CostMode::FfFp32, CostMode::BpFp32, CostMode::BpInt8] {
        let analytic = analytic_counts(&ArchSpec::new(widths.clone(), batch, mode).with_chain(true))?;
        let measured = instrumented_step(&widths, batch, mode, true, 0)?;
        println!(
            "{mode:<8} analytic == instrumented: {}",
            if analytic == measured { "yes" } else { "NO" }
        );
        rows.push((mode.name().to_string(), analytic));
    }
    // FF INT8 against FP32 backprop.
    let pair = [rows[0].clone(), rows[2].clone()];
    print!("{}", cost_report(&pair).to_text());
    Ok(())
}

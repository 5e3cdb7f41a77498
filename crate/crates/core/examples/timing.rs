//! Per-step wall clock of full-chain re-inference versus sliding-window steps.

use cgfb::experiment::{compare_timing, median, TimingSpec};
use cgfb::model::GhmmParams;

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let rows = compare_timing(&params, &TimingSpec::new(100, 100, 0, 20))?;
    for r in rows.iter().step_by(10) {
        println!(
            "t={:<3} full chain {:>8.3} ms   window {:>6.3} ms",
            r.t + 1,
            r.baseline_ms,
            r.sw_ms
        );
    }
    let sw: Vec<f64> = rows.iter().map(|r| r.sw_ms).collect();
    println!(
        "median window step: t in 41..50 {:.3} ms, t in 91..100 {:.3} ms",
        median(&sw[40..50]),
        median(&sw[90..100])
    );
    Ok(())
}

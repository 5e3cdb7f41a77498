//! Simulates a population on the reference model and prints the fitted
//! aggregate observations next to the true hidden-state sample means.

use cgfb::experiment::sample_ground_truth;
use cgfb::model::{fit_aggregate, simulate, GhmmParams};

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let bundle = simulate(&params, 200, 10, 7)?;
    let agg = fit_aggregate(&bundle)?;
    let truth = sample_ground_truth(&bundle);

    println!(
        "{:>3} {:>10} {:>10} {:>12} {:>12}",
        "t", "mu_hat", "P_hat", "mean x1", "mean x2"
    );
    for (t, (e, g)) in agg.entries.iter().zip(truth.iter()).enumerate() {
        println!(
            "{:>3} {:>10.5} {:>10.3e} {:>12.5} {:>12.5}",
            t + 1,
            e.mu_hat()[0],
            e.p_hat(&params)[(0, 0)],
            g.mean()[0],
            g.mean()[1]
        );
    }
    Ok(())
}

//! Full-chain inference of the aggregate state marginals from population
//! summaries, scored against the simulated ground truth.

use cgfb::cgfb::{run_cgfb, CgfbConfig};
use cgfb::experiment::{compute_metrics, sample_ground_truth};
use cgfb::model::{fit_aggregate, simulate, GhmmParams};

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let bundle = simulate(&params, 200, 100, 1)?;
    let agg = fit_aggregate(&bundle)?;

    let out = run_cgfb(&params, &agg, &CgfbConfig::default())?;
    let truth = sample_ground_truth(&bundle);
    let metrics = compute_metrics(&out.marginals, &truth)?;

    println!("sweeps: {}", out.report.sweeps());
    println!("mean squared error:       {:.3e}", metrics.mean_sq_err);
    println!("covariance squared error: {:.3e}", metrics.cov_sq_err);
    for t in [0, 49, 99] {
        let (est, tru) = (&out.marginals[t], &truth[t]);
        println!(
            "t={:<3} estimate [{:+.4}, {:+.4}]  truth [{:+.4}, {:+.4}]",
            t + 1,
            est.mean()[0],
            est.mean()[1],
            tru.mean()[0],
            tru.mean()[1]
        );
    }
    Ok(())
}

//! Estimation error versus population size, averaged over seeds.

use cgfb::experiment::{run_experiment, Algorithm, ExperimentSpec};
use cgfb::model::GhmmParams;

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let seeds: Vec<u64> = (0..10).collect();
    println!("{:>5} {:>12} {:>12}", "M", "mean err", "cov err");
    for m in [10, 50, 100, 200, 500] {
        let rows = run_experiment(
            &params,
            &ExperimentSpec::new(m, 100, seeds.clone(), Algorithm::Cgfb),
        )?;
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.mean_sq_err).sum::<f64>() / n;
        let cov = rows.iter().map(|r| r.cov_sq_err).sum::<f64>() / n;
        println!("{m:>5} {mean:>12.4e} {cov:>12.4e}");
    }
    Ok(())
}

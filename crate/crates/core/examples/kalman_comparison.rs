//! Aggregate inference from summaries versus the mixture of per-agent Kalman
//! filters that see every individual observation with known identities.

use cgfb::experiment::{run_experiment, Algorithm, ExperimentSpec};
use cgfb::model::GhmmParams;

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let seeds: Vec<u64> = (0..5).collect();
    for algorithm in [Algorithm::Cgfb, Algorithm::KfAggregate] {
        let rows = run_experiment(
            &params,
            &ExperimentSpec::new(100, 100, seeds.clone(), algorithm),
        )?;
        let n = rows.len() as f64;
        println!(
            "{:<13} mean err {:.4e}  cov err {:.4e}",
            algorithm.name(),
            rows.iter().map(|r| r.mean_sq_err).sum::<f64>() / n,
            rows.iter().map(|r| r.cov_sq_err).sum::<f64>() / n,
        );
    }
    Ok(())
}

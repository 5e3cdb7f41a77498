//! Online filtering with a sliding window, with and without the boundary prior
//! that summarizes evicted steps.

use cgfb::experiment::{run_experiment, Algorithm, ExperimentSpec};
use cgfb::model::GhmmParams;

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let seeds: Vec<u64> = (0..10).collect();
    println!("{:>3} {:>14} {:>14}", "K", "with prior", "naive");
    for k in [5, 10, 20, 30] {
        let err = |algorithm| -> cgfb::Result<f64> {
            let spec = ExperimentSpec::new(100, 100, seeds.clone(), algorithm).with_window(k);
            let rows = run_experiment(&params, &spec)?;
            Ok(rows.iter().map(|r| r.mean_sq_err).sum::<f64>() / rows.len() as f64)
        };
        println!(
            "{k:>3} {:>14.4e} {:>14.4e}",
            err(Algorithm::SwCgfb)?,
            err(Algorithm::SwNaive)?
        );
    }
    Ok(())
}

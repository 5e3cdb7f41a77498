//! With a single agent, the sliding-window filter with K = 1 is the Kalman
//! filter and full-chain inference is the RTS smoother.

use cgfb::cgfb::{run_cgfb, CgfbConfig};
use cgfb::kalman::{kalman_filter, rts_smooth};
use cgfb::model::{fit_aggregate, simulate, GhmmParams};
use cgfb::window::{window_config, SlidingWindowFilter, WindowVariant};

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let bundle = simulate(&params, 1, 100, 3)?;
    let obs = &bundle.observations[0];
    let agg = fit_aggregate(&bundle)?;

    let kf = kalman_filter(&params, obs)?;
    let mut sw = SlidingWindowFilter::new(&params, 1, WindowVariant::WithPrior, window_config())?;
    let mut filter_dev: f64 = 0.0;
    for (step, k) in sw.run(agg.entries.clone())?.iter().zip(&kf) {
        filter_dev = filter_dev
            .max((step.filtered.mean() - &k.mean).amax())
            .max((step.filtered.cov() - &k.cov).amax());
    }

    let rts = rts_smooth(&params, obs)?;
    let full = run_cgfb(&params, &agg, &CgfbConfig::default())?;
    let mut smooth_dev: f64 = 0.0;
    for (a, b) in full.marginals.iter().zip(rts.iter()) {
        smooth_dev = smooth_dev
            .max((a.mean() - b.mean()).amax())
            .max((a.cov() - b.cov()).amax());
    }

    println!("max |window - Kalman filter| = {filter_dev:.2e}");
    println!("max |full chain - RTS|       = {smooth_dev:.2e}");
    Ok(())
}

//! Feeds aggregate records one at a time from a stream file, as they would
//! arrive from a sensor. Pass a file written by `cgfb simulate`, or run with
//! no argument to use a simulated stream.

use std::io::BufReader;

use cgfb::io::{read_stream, write_stream};
use cgfb::model::{fit_aggregate, simulate, GhmmParams};
use cgfb::window::{window_config, SlidingWindowFilter, WindowVariant};

fn main() -> cgfb::Result<()> {
    let params = GhmmParams::reference(0.05);
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => {
            let agg = fit_aggregate(&simulate(&params, 100, 40, 11)?)?;
            let mut buf = Vec::new();
            write_stream(&mut buf, &agg, &params)?;
            String::from_utf8(buf).expect("stream is utf-8")
        }
    };
    let records = read_stream(BufReader::new(text.as_bytes()), params.obs_dim())?;

    let mut filter =
        SlidingWindowFilter::new(&params, 10, WindowVariant::WithPrior, window_config())?;
    for (t, entry) in records {
        let out = filter.step(entry)?;
        let m = out.filtered.mean();
        println!(
            "t={t:<3} x=[{:+.4}, {:+.4}] sweeps={:<2} {:.3} ms",
            m[0], m[1], out.sweeps, out.wall_ms
        );
    }
    Ok(())
}

//! Per-sweep message residuals on the reference model with M = 200 and T = 100.
//! Writes `convergence.csv` and `convergence.svg` to the directory given as
//! the first argument (default: current directory).

use std::fs::File;
use std::path::PathBuf;

use cgfb::cgfb::{run_cgfb, CgfbConfig};
use cgfb::io::write_convergence_csv;
use cgfb::model::{fit_aggregate, simulate, GhmmParams};
use cgfb::plot::{line_chart, Series};

fn main() -> cgfb::Result<()> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let params = GhmmParams::reference(0.05);
    let config = CgfbConfig {
        conv_tol: 1e-12,
        ..CgfbConfig::default()
    };

    let mut series = Vec::new();
    for seed in 0..5 {
        let agg = fit_aggregate(&simulate(&params, 200, 100, seed)?)?;
        let out = run_cgfb(&params, &agg, &config)?;
        println!("seed {seed}: {} sweeps", out.report.sweeps());
        if seed == 0 {
            write_convergence_csv(File::create(out_dir.join("convergence.csv"))?, &out.report)?;
        }
        let pts = out
            .report
            .residuals
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64, r))
            .collect();
        series.push(Series::new(format!("seed {seed}"), pts));
    }
    let svg = line_chart(
        "Message residual per sweep",
        "sweep",
        "residual",
        &series,
        true,
    );
    std::fs::write(out_dir.join("convergence.svg"), svg)?;
    Ok(())
}

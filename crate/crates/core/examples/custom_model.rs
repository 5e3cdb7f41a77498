//! Loads a model from its TOML description and runs inference on it. Without
//! an argument, a three-dimensional model is built inline.

use cgfb::cgfb::{run_cgfb, CgfbConfig};
use cgfb::io::{load_model, model_to_toml, parse_model};
use cgfb::model::{fit_aggregate, simulate};

const INLINE: &str = r#"
d_x = 3
d_o = 2
A = [0.95, 0.1, 0.0,  0.0, 0.9, 0.1,  0.0, 0.0, 0.8]
C = [1.0, 0.0, 0.0,  0.0, 0.0, 1.0]
Q = [0.01, 0.0, 0.0,  0.0, 0.01, 0.0,  0.0, 0.0, 0.01]
R = [0.1, 0.0,  0.0, 0.1]
pi = [0.0, 1.0, -1.0]
Pi = [1.0, 0.0, 0.0,  0.0, 1.0, 0.0,  0.0, 0.0, 1.0]
"#;

fn main() -> cgfb::Result<()> {
    let params = match std::env::args().nth(1) {
        Some(path) => load_model(path)?,
        None => parse_model(INLINE)?,
    };
    print!("{}", model_to_toml(&params, None));

    let agg = fit_aggregate(&simulate(&params, 50, 30, 5)?)?;
    // Direct, low-noise observations of two coordinates make the iteration
    // contract slowly, so allow a larger sweep budget than the default.
    let config = CgfbConfig {
        max_iters: 2000,
        ..CgfbConfig::default()
    };
    let out = run_cgfb(&params, &agg, &config)?;
    let last = out.marginals.last().expect("non-empty chain");
    println!(
        "converged in {} sweeps; final mean {:?}",
        out.report.sweeps(),
        last.mean().as_slice()
    );
    Ok(())
}

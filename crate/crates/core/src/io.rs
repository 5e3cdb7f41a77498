//! File formats: the TOML model description, CSV exports, and the
//! line-oriented aggregate observation stream.
//!
//! # Model file
//!
//! ```toml
//! d_x = 2
//! d_o = 1
//! delta_t = 0.05          # optional, provenance only
//! A  = [1.0, 0.05, -0.05, 0.975]   # row-major, d_x * d_x
//! C  = [0.0, 0.05]                 # row-major, d_o * d_x
//! Q  = [0.005, 0.0, 0.0, 0.005]    # d_x * d_x
//! R  = [0.035]                     # d_o * d_o
//! pi = [1.0, 0.0]                  # d_x
//! Pi = [1.0, 0.2, 0.2, 1.0]        # d_x * d_x
//! ```
//!
//! # CSV exports
//!
//! Step indices in every CSV are 1-based.
//!
//! * trajectories and aggregates: `t,series,component,value`, with series
//!   `mu_hat`, `P_hat(i,j)`, `state(m)` or `obs(m)`; `component` is the 1-based
//!   entry index (row-major for `P_hat`),
//! * marginals: `t,mu_1..mu_d,P_11..P_dd`,
//! * convergence: `sweep,residual`.
//!
//! # Observation stream
//!
//! One record per line, `t, mu_hat_1..mu_hat_do, P_hat row-major`, comma
//! separated. Blank lines and lines starting with `#` are skipped.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::cgfb::{ConvergenceReport, MarginalTrajectory};
use crate::error::{Error, Result};
use crate::gauss::MomentGaussian;
use crate::model::{AggregateEntry, AggregateObservations, GhmmParams, TrajectoryBundle};

fn parse_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn get_usize(table: &toml::Table, field: &str) -> Result<usize> {
    match table.get(field) {
        None => Err(parse_err(field, "missing")),
        Some(toml::Value::Integer(v)) if *v >= 1 => Ok(*v as usize),
        Some(other) => Err(parse_err(
            field,
            format!("expected a positive integer, found {other}"),
        )),
    }
}

fn get_array(table: &toml::Table, field: &str, expected_len: usize) -> Result<Vec<f64>> {
    let value = table
        .get(field)
        .ok_or_else(|| parse_err(field, "missing"))?;
    let items = value
        .as_array()
        .ok_or_else(|| parse_err(field, "expected an array of numbers"))?;
    let values = items
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(n) => Ok(*n as f64),
            other => Err(parse_err(
                field,
                format!("entry {i} is not a number: {other}"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected_len {
        return Err(parse_err(
            field,
            format!("expected {expected_len} entries, found {}", values.len()),
        ));
    }
    Ok(values)
}

/// Parses and validates a model description.
pub fn parse_model(text: &str) -> Result<GhmmParams> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| parse_err("<document>", e.to_string()))?;
    let dx = get_usize(&table, "d_x")?;
    let d_o = get_usize(&table, "d_o")?;
    if let Some(v) = table.get("delta_t") {
        if v.as_float().or(v.as_integer().map(|i| i as f64)).is_none() {
            return Err(parse_err("delta_t", "expected a number"));
        }
    }
    let a = DMatrix::from_row_slice(dx, dx, &get_array(&table, "A", dx * dx)?);
    let c = DMatrix::from_row_slice(d_o, dx, &get_array(&table, "C", d_o * dx)?);
    let q = DMatrix::from_row_slice(dx, dx, &get_array(&table, "Q", dx * dx)?);
    let r = DMatrix::from_row_slice(d_o, d_o, &get_array(&table, "R", d_o * d_o)?);
    let pi = DVector::from_vec(get_array(&table, "pi", dx)?);
    let pi_cov = DMatrix::from_row_slice(dx, dx, &get_array(&table, "Pi", dx * dx)?);
    GhmmParams::new(a, q, c, r, pi, pi_cov)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GhmmParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| parse_err("model", format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Serializes `params` in the model file format.
pub fn model_to_toml(params: &GhmmParams, delta_t: Option<f64>) -> String {
    let mut table = toml::Table::new();
    let arr = |v: Vec<f64>| toml::Value::Array(v.into_iter().map(toml::Value::Float).collect());
    if let Some(dt) = delta_t {
        table.insert("delta_t".into(), toml::Value::Float(dt));
    }
    table.insert(
        "d_x".into(),
        toml::Value::Integer(params.state_dim() as i64),
    );
    table.insert("d_o".into(), toml::Value::Integer(params.obs_dim() as i64));
    table.insert("A".into(), arr(row_major(&params.a)));
    table.insert("C".into(), arr(row_major(&params.c)));
    table.insert("Q".into(), arr(row_major(&params.q)));
    table.insert("R".into(), arr(row_major(&params.r)));
    table.insert("pi".into(), arr(params.pi.iter().copied().collect()));
    table.insert("Pi".into(), arr(row_major(&params.pi_cov)));
    toml::to_string(&table).expect("a table of numbers always serializes")
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn push_long_rows<W: Write>(
    wtr: &mut csv::Writer<W>,
    t: usize,
    series: &str,
    values: impl IntoIterator<Item = f64>,
) -> Result<()> {
    for (k, v) in values.into_iter().enumerate() {
        wtr.write_record([
            (t + 1).to_string(),
            series.to_string(),
            (k + 1).to_string(),
            v.to_string(),
        ])?;
    }
    Ok(())
}

/// Long-format dump of simulated states and observations.
pub fn write_bundle_csv<W: Write>(w: W, bundle: &TrajectoryBundle) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["t", "series", "component", "value"])?;
    for t in 0..bundle.steps() {
        for m in 0..bundle.agents() {
            push_long_rows(
                &mut wtr,
                t,
                &format!("state({})", m + 1),
                bundle.states[m][t].iter().copied(),
            )?;
        }
        for m in 0..bundle.agents() {
            push_long_rows(
                &mut wtr,
                t,
                &format!("obs({})", m + 1),
                bundle.observations[m][t].iter().copied(),
            )?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Long-format dump of aggregate summaries. Single-agent entries report `R` as `P_hat`.
pub fn write_aggregate_csv<W: Write>(
    w: W,
    agg: &AggregateObservations,
    params: &GhmmParams,
) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["t", "series", "component", "value"])?;
    for (t, e) in agg.entries.iter().enumerate() {
        push_long_rows(&mut wtr, t, "mu_hat", e.mu_hat().iter().copied())?;
        let p = e.p_hat(params);
        let d = p.nrows();
        for i in 0..d {
            for j in 0..d {
                wtr.write_record([
                    (t + 1).to_string(),
                    format!("P_hat({},{})", i + 1, j + 1),
                    (i * d + j + 1).to_string(),
                    p[(i, j)].to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Header `t,mu_1..mu_d,P_11..P_dd` plus any extra column names.
pub fn marginal_header(d: usize, extra: &[&str]) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("mu_{i}")));
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("P_{i}{j}"));
        }
    }
    header.extend(extra.iter().map(|s| s.to_string()));
    header
}

/// One marginal row for 0-based step `t`.
pub fn marginal_record(t: usize, g: &MomentGaussian) -> Vec<String> {
    let mut row = vec![(t + 1).to_string()];
    row.extend(g.mean().iter().map(f64::to_string));
    row.extend(row_major(g.cov()).into_iter().map(|v| v.to_string()));
    row
}

pub fn write_marginals_csv<W: Write>(w: W, marginals: &MarginalTrajectory) -> Result<()> {
    let mut wtr = csv_writer(w);
    let d = marginals.steps.first().map_or(0, MomentGaussian::dim);
    wtr.write_record(marginal_header(d, &[]))?;
    for (t, g) in marginals.iter().enumerate() {
        wtr.write_record(marginal_record(t, g))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_convergence_csv<W: Write>(w: W, report: &ConvergenceReport) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["sweep", "residual"])?;
    for (i, r) in report.residuals.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), r.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses one stream record. Returns `None` for blank and comment lines.
pub fn parse_stream_record(line: &str, obs_dim: usize) -> Result<Option<(usize, AggregateEntry)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let expected = 1 + obs_dim + obs_dim * obs_dim;
    if fields.len() != expected {
        return Err(parse_err(
            "record",
            format!(
                "expected {expected} comma-separated fields, found {}",
                fields.len()
            ),
        ));
    }
    let t: usize = fields[0]
        .parse()
        .map_err(|_| parse_err("t", format!("not a step index: {:?}", fields[0])))?;
    let nums = fields[1..]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = if i < obs_dim {
                format!("mu_hat[{}]", i + 1)
            } else {
                format!("P_hat[{}]", i - obs_dim + 1)
            };
            s.parse::<f64>()
                .map_err(|_| parse_err(&name, format!("not a number: {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mu_hat = DVector::from_column_slice(&nums[..obs_dim]);
    let p_hat = DMatrix::from_row_slice(obs_dim, obs_dim, &nums[obs_dim..]);
    let entry =
        AggregateEntry::population(mu_hat, p_hat).map_err(|e| parse_err("P_hat", e.to_string()))?;
    Ok(Some((t, entry)))
}

/// Reads a whole observation stream. Errors carry the 1-based line number.
pub fn read_stream<R: BufRead>(reader: R, obs_dim: usize) -> Result<Vec<(usize, AggregateEntry)>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        match parse_stream_record(&line, obs_dim) {
            Ok(Some(rec)) => out.push(rec),
            Ok(None) => {}
            Err(Error::Parse { field, reason }) => {
                return Err(Error::Parse {
                    field: format!("line {}: {field}", lineno + 1),
                    reason,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Writes aggregates in the stream format, 1-based `t`.
pub fn write_stream<W: Write>(
    mut w: W,
    agg: &AggregateObservations,
    params: &GhmmParams,
) -> Result<()> {
    for (t, e) in agg.entries.iter().enumerate() {
        let mut fields = vec![(t + 1).to_string()];
        fields.extend(e.mu_hat().iter().map(f64::to_string));
        fields.extend(
            row_major(e.p_hat(params))
                .into_iter()
                .map(|v| v.to_string()),
        );
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

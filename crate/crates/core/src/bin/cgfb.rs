use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cgfb::cgfb::{run_cgfb, CgfbConfig};
use cgfb::experiment::{
    compare_timing, run_experiment, write_metrics_csv, write_timing_csv, Algorithm, ExperimentSpec,
    GroundTruth, Metric, TimingSpec,
};
use cgfb::io::{
    load_model, marginal_header, marginal_record, read_stream, write_aggregate_csv,
    write_bundle_csv, write_convergence_csv, write_marginals_csv, write_stream,
};
use cgfb::kalman::{kf_aggregate, rts_smooth};
use cgfb::model::{fit_aggregate, simulate, AggregateObservations, GhmmParams};
use cgfb::plot::{line_chart, Series};
use cgfb::window::{window_config, SlidingWindowFilter, WindowVariant};
use cgfb::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cgfb",
    version,
    about = "Aggregate inference for populations of linear-Gaussian agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a population and write trajectories, aggregates and an observation stream.
    Simulate(SimArgs),
    /// Full-chain inference of the aggregate state marginals.
    Infer(InferArgs),
    /// Online sliding-window filtering.
    SwInfer(SwArgs),
    /// Per-agent Kalman filters with known associations.
    Kalman(KalmanArgs),
    /// Score an estimator against ground truth over seeds and population sizes.
    Experiment(ExperimentArgs),
    /// Per-step cost of full-chain re-inference versus sliding-window steps.
    Timing(TimingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct Common {
    /// Model file (TOML). Defaults to the built-in reference model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Also render SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct PopulationArgs {
    #[arg(long, default_value_t = 200)]
    agents: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pop: PopulationArgs,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pop: PopulationArgs,
    /// Read aggregates from an observation stream instead of simulating.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
}

#[derive(Args)]
struct SwArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pop: PopulationArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    window: usize,
    /// Forget evicted steps instead of carrying them in the boundary prior.
    #[arg(long)]
    naive: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct KalmanArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pop: PopulationArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthArg {
    Sample,
    Analytic,
    Posterior,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// One or more population sizes.
    #[arg(long, value_delimiter = ',', default_value = "200")]
    agents: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "cgfb")]
    algorithm: String,
    #[arg(long)]
    window: Option<usize>,
    /// Shorthand for `--algorithm sw_naive`.
    #[arg(long)]
    naive: bool,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "mean_err,cov_err,runtime"
    )]
    metrics: Vec<String>,
    #[arg(long, value_enum, default_value = "sample")]
    ground_truth: TruthArg,
    /// Also emit one row per step.
    #[arg(long)]
    per_step: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct TimingArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pop: PopulationArgs,
    #[arg(long, default_value_t = 20)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Infer(a) => cmd_infer(a),
        Command::SwInfer(a) => cmd_sw_infer(a),
        Command::Kalman(a) => cmd_kalman(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Timing(a) => cmd_timing(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

impl Common {
    fn model(&self) -> Result<GhmmParams> {
        match &self.model {
            Some(path) => load_model(path),
            None => Ok(GhmmParams::reference(0.05)),
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let Format::Csv = self.format;
        fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn plot(&self, name: &str, svg: impl FnOnce() -> String) -> Result<()> {
        if self.plot {
            fs::create_dir_all(&self.out)?;
            fs::write(self.out.join(name), svg())?;
        }
        Ok(())
    }
}

fn config_with(base: CgfbConfig, tol: Option<f64>, max_iters: Option<usize>) -> Result<CgfbConfig> {
    let config = CgfbConfig {
        conv_tol: tol.unwrap_or(base.conv_tol),
        max_iters: max_iters.unwrap_or(base.max_iters),
        ..base
    };
    config.validate()?;
    Ok(config)
}

fn aggregates(
    params: &GhmmParams,
    pop: &PopulationArgs,
    input: Option<&Path>,
) -> Result<AggregateObservations> {
    match input {
        Some(path) => {
            let records = read_stream(BufReader::new(File::open(path)?), params.obs_dim())?;
            for (i, (t, _)) in records.iter().enumerate() {
                if *t != i + 1 {
                    return Err(Error::Parse {
                        field: format!("record {}", i + 1),
                        reason: format!("expected t = {}, found {t}", i + 1),
                    });
                }
            }
            Ok(AggregateObservations::new(
                records.into_iter().map(|(_, e)| e).collect(),
            ))
        }
        None => fit_aggregate(&simulate(params, pop.agents, pop.steps, pop.seed)?),
    }
}

fn cmd_simulate(a: SimArgs) -> Result<()> {
    let params = a.common.model()?;
    let bundle = simulate(&params, a.pop.agents, a.pop.steps, a.pop.seed)?;
    let agg = fit_aggregate(&bundle)?;
    write_bundle_csv(a.common.create("trajectories.csv")?, &bundle)?;
    write_aggregate_csv(a.common.create("aggregates.csv")?, &agg, &params)?;
    write_stream(a.common.create("stream.csv")?, &agg, &params)?;
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let params = a.common.model()?;
    let config = CgfbConfig {
        damping: a.damping,
        ..config_with(CgfbConfig::default(), a.tol, a.max_iters)?
    };
    config.validate()?;
    let agg = aggregates(&params, &a.pop, a.input.as_deref())?;
    let out = match run_cgfb(&params, &agg, &config) {
        Ok(out) => out,
        Err(Error::MaxItersExceeded {
            best,
            sweeps,
            residual,
        }) => {
            // Keep the best iterate on disk for inspection, then report the failure.
            write_convergence_csv(a.common.create("convergence.csv")?, &best.report)?;
            write_marginals_csv(a.common.create("marginals.csv")?, &best.marginals)?;
            return Err(Error::MaxItersExceeded {
                sweeps,
                residual,
                best,
            });
        }
        Err(e) => return Err(e),
    };
    write_marginals_csv(a.common.create("marginals.csv")?, &out.marginals)?;
    write_convergence_csv(a.common.create("convergence.csv")?, &out.report)?;
    a.common.plot("convergence.svg", || {
        let pts = out
            .report
            .residuals
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64, r))
            .collect();
        line_chart(
            "Message residual",
            "sweep",
            "sup-norm residual",
            &[Series::new("residual", pts)],
            true,
        )
    })?;
    eprintln!(
        "converged in {} sweeps, residual {:.3e}",
        out.report.sweeps(),
        out.report.final_residual().unwrap_or(0.0)
    );
    Ok(())
}

fn cmd_sw_infer(a: SwArgs) -> Result<()> {
    let params = a.common.model()?;
    let config = config_with(window_config(), a.tol, a.max_iters)?;
    let variant = if a.naive {
        WindowVariant::Naive
    } else {
        WindowVariant::WithPrior
    };
    let agg = aggregates(&params, &a.pop, a.input.as_deref())?;
    let mut filter = SlidingWindowFilter::new(&params, a.window, variant, config)?;
    let mut wtr = csv::Writer::from_writer(a.common.create("filtered.csv")?);
    wtr.write_record(marginal_header(
        params.state_dim(),
        &["sweeps", "converged", "wall_ms"],
    ))
    .map_err(Error::from)?;
    let mut sweeps = Vec::with_capacity(agg.len());
    for entry in agg.entries {
        let step = filter.step(entry)?;
        let mut rec = marginal_record(step.t, &step.filtered);
        rec.push(step.sweeps.to_string());
        rec.push(step.converged.to_string());
        rec.push(format!("{:.4}", step.wall_ms));
        wtr.write_record(&rec).map_err(Error::from)?;
        sweeps.push(((step.t + 1) as f64, step.sweeps as f64));
    }
    wtr.flush()?;
    a.common.plot("sweeps.svg", || {
        line_chart(
            "Sweeps per step",
            "t",
            "sweeps",
            &[Series::new("sweeps", sweeps)],
            false,
        )
    })
}

fn cmd_kalman(a: KalmanArgs) -> Result<()> {
    let params = a.common.model()?;
    let bundle = simulate(&params, a.pop.agents, a.pop.steps, a.pop.seed)?;
    let summaries = kf_aggregate(&params, &bundle)?;
    let mut wtr = csv::Writer::from_writer(a.common.create("kf_aggregate.csv")?);
    wtr.write_record(marginal_header(params.state_dim(), &[]))
        .map_err(Error::from)?;
    for (t, s) in summaries.into_iter().enumerate() {
        let g = cgfb::gauss::MomentGaussian::new(s.mean, s.cov)?;
        wtr.write_record(marginal_record(t, &g))
            .map_err(Error::from)?;
    }
    wtr.flush()?;
    if a.pop.agents == 1 {
        let smoothed = rts_smooth(&params, &bundle.observations[0])?;
        write_marginals_csv(a.common.create("rts.csv")?, &smoothed)?;
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let params = a.common.model()?;
    let algorithm: Algorithm = if a.naive {
        Algorithm::SwNaive
    } else {
        a.algorithm.parse()?
    };
    let metrics = a
        .metrics
        .iter()
        .map(|m| m.parse())
        .collect::<Result<Vec<Metric>>>()?;
    let ground_truth = match a.ground_truth {
        TruthArg::Sample => GroundTruth::Sample,
        TruthArg::Analytic => GroundTruth::Analytic,
        TruthArg::Posterior => GroundTruth::Posterior,
    };
    let mut rows = Vec::new();
    for &m in &a.agents {
        let mut spec = ExperimentSpec::new(m, a.steps, a.seeds.clone(), algorithm);
        spec.window = a.window;
        spec.metrics = metrics.clone();
        spec.ground_truth = ground_truth;
        spec.per_step = a.per_step;
        spec.config = config_with(spec.config, a.tol, a.max_iters)?;
        rows.extend(run_experiment(&params, &spec)?);
    }
    write_metrics_csv(a.common.create("metrics.csv")?, &rows, &metrics)?;
    a.common.plot("errors.svg", || {
        let avg = |f: fn(&cgfb::experiment::MetricRow) -> f64| -> Vec<(f64, f64)> {
            a.agents
                .iter()
                .map(|&m| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.agents == m && r.t.is_none())
                        .map(f)
                        .collect();
                    (m as f64, v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect()
        };
        line_chart(
            "Error versus population size",
            "agents",
            "squared error",
            &[
                Series::new("mean", avg(|r| r.mean_sq_err)),
                Series::new("covariance", avg(|r| r.cov_sq_err)),
            ],
            true,
        )
    })
}

fn cmd_timing(a: TimingArgs) -> Result<()> {
    let params = a.common.model()?;
    let mut spec = TimingSpec::new(a.pop.agents, a.pop.steps, a.pop.seed, a.window);
    spec.repeats = a.repeats;
    let rows = compare_timing(&params, &spec)?;
    let mut w = a.common.create("timing.csv")?;
    write_timing_csv(&mut w, &rows)?;
    w.flush()?;
    a.common.plot("timing.svg", || {
        let s = |f: fn(&cgfb::experiment::TimingRow) -> f64| {
            rows.iter().map(|r| ((r.t + 1) as f64, f(r))).collect()
        };
        line_chart(
            "Per-step wall clock",
            "t",
            "ms",
            &[
                Series::new("full chain", s(|r| r.baseline_ms)),
                Series::new("sliding window", s(|r| r.sw_ms)),
            ],
            false,
        )
    })
}

//! End-to-end experiment harness: simulate a population, fit aggregates, run
//! an estimator, and score it against a ground truth.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::cgfb::{run_cgfb, CgfbConfig, MarginalTrajectory};
use crate::error::{Error, Result};
use crate::gauss::MomentGaussian;
use crate::kalman::{joint_oracle, kf_aggregate, rts_smooth, JOINT_ORACLE_CAP};
use crate::model::{fit_aggregate, sample_moments, simulate, GhmmParams, TrajectoryBundle};
use crate::window::{window_config, SlidingWindowFilter, WindowVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Full-chain message passing (smoothing).
    Cgfb,
    /// Sliding window with the evicted-history prior (filtering).
    SwCgfb,
    /// Sliding window without the evicted-history prior (filtering).
    SwNaive,
    /// `M` independent Kalman filters with known associations (filtering).
    KfAggregate,
}

impl Algorithm {
    pub fn is_windowed(self) -> bool {
        matches!(self, Algorithm::SwCgfb | Algorithm::SwNaive)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cgfb => "cgfb",
            Algorithm::SwCgfb => "sw_cgfb",
            Algorithm::SwNaive => "sw_naive",
            Algorithm::KfAggregate => "kf_aggregate",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgfb" => Ok(Algorithm::Cgfb),
            "sw_cgfb" | "sw-cgfb" => Ok(Algorithm::SwCgfb),
            "sw_naive" | "sw-naive" => Ok(Algorithm::SwNaive),
            "kf_aggregate" | "kf-aggregate" => Ok(Algorithm::KfAggregate),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    MeanErr,
    CovErr,
    Runtime,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_err" => Ok(Metric::MeanErr),
            "cov_err" => Ok(Metric::CovErr),
            "runtime" => Ok(Metric::Runtime),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

/// What the estimates are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroundTruth {
    /// Per-step sample mean and covariance of the simulated hidden states (needs `M >= 2`).
    #[default]
    Sample,
    /// The model's unconditional state marginals.
    Analytic,
    /// Exact single-agent smoothing posterior (needs `M = 1`): brute-force joint
    /// conditioning when small enough, RTS otherwise.
    Posterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub agents: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    pub window: Option<usize>,
    pub metrics: Vec<Metric>,
    pub config: CgfbConfig,
    pub ground_truth: GroundTruth,
    /// Emit one row per step in addition to the time-averaged row.
    pub per_step: bool,
}

impl ExperimentSpec {
    pub fn new(agents: usize, steps: usize, seeds: Vec<u64>, algorithm: Algorithm) -> Self {
        Self {
            agents,
            steps,
            seeds,
            algorithm,
            window: None,
            metrics: vec![Metric::MeanErr, Metric::CovErr, Metric::Runtime],
            config: if algorithm.is_windowed() {
                window_config()
            } else {
                CgfbConfig::default()
            },
            ground_truth: GroundTruth::default(),
            per_step: false,
        }
    }

    pub fn with_window(mut self, k: usize) -> Self {
        self.window = Some(k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig(
                "agents and steps must be at least 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        match (self.algorithm.is_windowed(), self.window) {
            (true, None) => {
                return Err(Error::InvalidConfig(format!(
                    "{} needs a window length",
                    self.algorithm.name()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{} does not take a window length",
                    self.algorithm.name()
                )))
            }
            (true, Some(0)) => return Err(Error::InvalidWindow),
            _ => {}
        }
        match self.ground_truth {
            GroundTruth::Sample if self.agents < 2 => Err(Error::InvalidConfig(
                "sample ground truth needs at least two agents; use the posterior ground truth for M = 1".into(),
            )),
            GroundTruth::Posterior if self.agents != 1 => {
                Err(Error::InvalidConfig("posterior ground truth is only defined for M = 1".into()))
            }
            _ => self.config.validate(),
        }
    }
}

/// Scores for one seed, either at one step or averaged over all steps (`t = None`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub agents: usize,
    pub seed: u64,
    /// 0-based step, or `None` for the time average.
    pub t: Option<usize>,
    pub mean_sq_err: f64,
    pub cov_sq_err: f64,
    pub wall_ms: f64,
}

/// Squared errors per step and their time averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_step: Vec<(f64, f64)>,
    pub mean_sq_err: f64,
    pub cov_sq_err: f64,
}

/// `(1/T) sum_t |mu_t - mu*_t|^2` and `(1/T) sum_t |P_t - P*_t|_F^2`.
pub fn compute_metrics(
    estimates: &MarginalTrajectory,
    truth: &MarginalTrajectory,
) -> Result<Metrics> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            context: "estimates vs ground truth".into(),
            left: estimates.len(),
            right: truth.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot score an empty trajectory".into(),
        ));
    }
    let per_step: Vec<(f64, f64)> = estimates
        .iter()
        .zip(truth.iter())
        .map(|(e, g)| {
            let dm = e.mean() - g.mean();
            let dp = e.cov() - g.cov();
            (dm.norm_squared(), dp.norm_squared())
        })
        .collect();
    let n = per_step.len() as f64;
    let mean_sq_err = per_step.iter().map(|p| p.0).sum::<f64>() / n;
    let cov_sq_err = per_step.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(Metrics {
        per_step,
        mean_sq_err,
        cov_sq_err,
    })
}

/// Per-step sample moments of the hidden states across agents.
pub fn sample_ground_truth(bundle: &TrajectoryBundle) -> MarginalTrajectory {
    let m = bundle.agents();
    MarginalTrajectory::new(
        (0..bundle.steps())
            .map(|t| {
                let (mean, cov) = sample_moments(bundle.states_at(t), m);
                MomentGaussian::from_parts(mean, cov)
            })
            .collect(),
    )
}

/// Ground truth for `bundle` under `kind`.
pub fn ground_truth(
    params: &GhmmParams,
    bundle: &TrajectoryBundle,
    kind: GroundTruth,
) -> Result<MarginalTrajectory> {
    match kind {
        GroundTruth::Sample => Ok(sample_ground_truth(bundle)),
        GroundTruth::Analytic => Ok(MarginalTrajectory::new(
            params.prior_marginals(bundle.steps()),
        )),
        GroundTruth::Posterior => {
            let obs = &bundle.observations[0];
            if obs.len() * (params.state_dim() + params.obs_dim()) <= JOINT_ORACLE_CAP {
                joint_oracle(params, obs)
            } else {
                rts_smooth(params, obs)
            }
        }
    }
}

/// Runs `algorithm` on one bundle. Returns the estimates and the wall time of
/// the estimator alone.
pub fn estimate(
    params: &GhmmParams,
    bundle: &TrajectoryBundle,
    algorithm: Algorithm,
    window: Option<usize>,
    config: &CgfbConfig,
) -> Result<(MarginalTrajectory, f64)> {
    let stage = |stage: &'static str| {
        move |e: Error| Error::Stage {
            seed: bundle.seed,
            stage,
            source: Box::new(e),
        }
    };
    let start = Instant::now();
    let estimates = match algorithm {
        Algorithm::Cgfb => {
            let agg = fit_aggregate(bundle).map_err(stage("fit_aggregate"))?;
            run_cgfb(params, &agg, config)
                .map_err(stage("cgfb"))?
                .marginals
        }
        Algorithm::SwCgfb | Algorithm::SwNaive => {
            let agg = fit_aggregate(bundle).map_err(stage("fit_aggregate"))?;
            let variant = if algorithm == Algorithm::SwCgfb {
                WindowVariant::WithPrior
            } else {
                WindowVariant::Naive
            };
            let k = window.ok_or(Error::InvalidWindow)?;
            let mut filter =
                SlidingWindowFilter::new(params, k, variant, *config).map_err(stage("sw_init"))?;
            let steps = filter.run(agg.entries).map_err(stage("sw_step"))?;
            MarginalTrajectory::new(steps.into_iter().map(|s| s.filtered).collect())
        }
        Algorithm::KfAggregate => {
            let summaries = kf_aggregate(params, bundle).map_err(stage("kf_aggregate"))?;
            MarginalTrajectory::new(
                summaries
                    .into_iter()
                    .map(|s| MomentGaussian::from_parts(s.mean, s.cov))
                    .collect(),
            )
        }
    };
    Ok((estimates, start.elapsed().as_secs_f64() * 1e3))
}

/// For each seed: simulate, estimate, and score. Seeds run in parallel; rows
/// come back in seed order, the time-averaged row after any per-step rows.
pub fn run_experiment(params: &GhmmParams, spec: &ExperimentSpec) -> Result<Vec<MetricRow>> {
    spec.validate()?;
    let per_seed =
        spec.seeds
            .par_iter()
            .map(|&seed| -> Result<Vec<MetricRow>> {
                let bundle =
                    simulate(params, spec.agents, spec.steps, seed).map_err(|e| Error::Stage {
                        seed,
                        stage: "simulate",
                        source: Box::new(e),
                    })?;
                let (est, wall_ms) =
                    estimate(params, &bundle, spec.algorithm, spec.window, &spec.config)?;
                let truth =
                    ground_truth(params, &bundle, spec.ground_truth).map_err(|e| Error::Stage {
                        seed,
                        stage: "ground_truth",
                        source: Box::new(e),
                    })?;
                let metrics = compute_metrics(&est, &truth)?;
                let mut rows = Vec::new();
                if spec.per_step {
                    rows.extend(metrics.per_step.iter().enumerate().map(|(t, &(m, c))| {
                        MetricRow {
                            agents: spec.agents,
                            seed,
                            t: Some(t),
                            mean_sq_err: m,
                            cov_sq_err: c,
                            wall_ms: f64::NAN,
                        }
                    }));
                }
                rows.push(MetricRow {
                    agents: spec.agents,
                    seed,
                    t: None,
                    mean_sq_err: metrics.mean_sq_err,
                    cov_sq_err: metrics.cov_sq_err,
                    wall_ms,
                });
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// `agents,seed,t,mean_sq_err,cov_sq_err,wall_ms`, restricted to the selected metrics.
/// The time-averaged row has `t = avg`.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricRow], metrics: &[Metric]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["agents", "seed", "t"];
    let has = |m: Metric| metrics.contains(&m);
    if has(Metric::MeanErr) {
        header.push("mean_sq_err");
    }
    if has(Metric::CovErr) {
        header.push("cov_sq_err");
    }
    if has(Metric::Runtime) {
        header.push("wall_ms");
    }
    wtr.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.agents.to_string(),
            row.seed.to_string(),
            row.t
                .map_or_else(|| "avg".to_string(), |t| (t + 1).to_string()),
        ];
        if has(Metric::MeanErr) {
            rec.push(row.mean_sq_err.to_string());
        }
        if has(Metric::CovErr) {
            rec.push(row.cov_sq_err.to_string());
        }
        if has(Metric::Runtime) {
            rec.push(if row.wall_ms.is_nan() {
                String::new()
            } else {
                format!("{:.3}", row.wall_ms)
            });
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-step wall clock of full-chain re-inference versus one sliding-window step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    /// 0-based step.
    pub t: usize,
    pub baseline_ms: f64,
    pub sw_ms: f64,
    pub sw_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSpec {
    pub agents: usize,
    pub steps: usize,
    pub seed: u64,
    pub window: usize,
    /// Each step is timed this many times and the minimum kept.
    pub repeats: usize,
    pub baseline_config: CgfbConfig,
    pub window_config: CgfbConfig,
}

impl TimingSpec {
    pub fn new(agents: usize, steps: usize, seed: u64, window: usize) -> Self {
        Self {
            agents,
            steps,
            seed,
            window,
            repeats: 3,
            baseline_config: CgfbConfig::default(),
            window_config: window_config(),
        }
    }
}

/// At every step `t`, times a from-scratch full-chain run on the first `t + 1`
/// aggregates against one step of the sliding-window filter.
pub fn compare_timing(params: &GhmmParams, spec: &TimingSpec) -> Result<Vec<TimingRow>> {
    if spec.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let bundle = simulate(params, spec.agents, spec.steps, spec.seed)?;
    let agg = fit_aggregate(&bundle)?;

    let mut sw_ms = vec![f64::INFINITY; spec.steps];
    let mut sw_sweeps = vec![0; spec.steps];
    for _ in 0..spec.repeats {
        let mut filter = SlidingWindowFilter::new(
            params,
            spec.window,
            WindowVariant::WithPrior,
            spec.window_config,
        )?;
        for (t, e) in agg.entries.iter().enumerate() {
            let start = Instant::now();
            let out = filter.step(e.clone())?;
            sw_ms[t] = sw_ms[t].min(start.elapsed().as_secs_f64() * 1e3);
            sw_sweeps[t] = out.sweeps;
        }
    }

    let mut rows = Vec::with_capacity(spec.steps);
    for t in 0..spec.steps {
        let prefix = crate::model::AggregateObservations::new(agg.entries[..=t].to_vec());
        let mut best = f64::INFINITY;
        for _ in 0..spec.repeats {
            let start = Instant::now();
            match run_cgfb(params, &prefix, &spec.baseline_config) {
                Ok(_) | Err(Error::MaxItersExceeded { .. }) => {}
                Err(e) => {
                    return Err(Error::AtTime {
                        t,
                        source: Box::new(e),
                    })
                }
            }
            best = best.min(start.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(TimingRow {
            t,
            baseline_ms: best,
            sw_ms: sw_ms[t],
            sw_sweeps: sw_sweeps[t],
        });
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(w: W, rows: &[TimingRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "baseline_ms", "sw_ms"])?;
    for r in rows {
        wtr.write_record([
            (r.t + 1).to_string(),
            format!("{:.4}", r.baseline_ms),
            format!("{:.4}", r.sw_ms),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Median of `values[range]`.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

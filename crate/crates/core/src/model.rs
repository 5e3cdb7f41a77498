//! The linear-Gaussian hidden Markov model, population simulation, and the
//! per-step Gaussian summaries fitted to aggregate observations.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, ModelIssue, Result};
use crate::gauss::{cholesky_with_jitter, jitter_for, max_asymmetry, symmetrize, MomentGaussian};
use crate::tolerances::TAU_SYM;

/// `x_{t+1} = A x_t + N(0, Q)`, `o_t = C x_t + N(0, R)`, `x_1 ~ N(pi, Pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhmmParams {
    /// State transition, `d_x x d_x`.
    pub a: DMatrix<f64>,
    /// Process noise covariance, `d_x x d_x`.
    pub q: DMatrix<f64>,
    /// Observation map, `d_o x d_x`.
    pub c: DMatrix<f64>,
    /// Observation noise covariance, `d_o x d_o`.
    pub r: DMatrix<f64>,
    /// Initial mean.
    pub pi: DVector<f64>,
    /// Initial covariance.
    pub pi_cov: DMatrix<f64>,
}

impl GhmmParams {
    pub fn new(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
        r: DMatrix<f64>,
        pi: DVector<f64>,
        pi_cov: DMatrix<f64>,
    ) -> Result<Self> {
        Self {
            a,
            q,
            c,
            r,
            pi,
            pi_cov,
        }
        .validate()
    }

    /// Damped planar oscillator observed through a scaled velocity channel.
    /// With `dt = 0.05` this is the model the bundled experiments use.
    pub fn reference(dt: f64) -> Self {
        Self {
            a: dmatrix![1.0, dt; -dt, 1.0 - 0.5 * dt],
            q: dmatrix![0.1, 0.0; 0.0, 0.1] * dt,
            c: dmatrix![0.0, dt],
            r: dmatrix![0.7] * dt,
            pi: dvector![1.0, 0.0],
            pi_cov: dmatrix![1.0, 0.2; 0.2, 1.0],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.pi.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Returns `self` if every invariant holds, otherwise every violation found.
    pub fn validate(self) -> Result<Self> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(issues))
        }
    }

    fn issues(&self) -> Vec<ModelIssue> {
        let dx = self.pi.len();
        let d_o = self.c.nrows();
        let mut issues = Vec::new();
        let mut push =
            |field: &'static str, reason: String| issues.push(ModelIssue { field, reason });

        if dx == 0 {
            push("pi", "state dimension must be at least 1".into());
        }
        if d_o == 0 {
            push("C", "observation dimension must be at least 1".into());
        }
        let shapes: [(&'static str, &DMatrix<f64>, (usize, usize)); 5] = [
            ("A", &self.a, (dx, dx)),
            ("Q", &self.q, (dx, dx)),
            ("C", &self.c, (d_o, dx)),
            ("R", &self.r, (d_o, d_o)),
            ("Pi", &self.pi_cov, (dx, dx)),
        ];
        for (field, m, (rows, cols)) in shapes {
            if m.shape() != (rows, cols) {
                push(
                    field,
                    format!("shape {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()),
                );
            } else if m.iter().any(|v| !v.is_finite()) {
                push(field, "non-finite entry".into());
            }
        }
        if self.pi.iter().any(|v| !v.is_finite()) {
            push("pi", "non-finite entry".into());
        }
        for (field, m) in [("Q", &self.q), ("R", &self.r), ("Pi", &self.pi_cov)] {
            if m.nrows() != m.ncols() || m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let asym = max_asymmetry(m);
            if asym > TAU_SYM * m.amax().max(1.0) {
                push(field, format!("not symmetric (max asymmetry {asym:e})"));
            } else if nalgebra::Cholesky::new(symmetrize(m)).is_none() {
                push(field, "not positive definite".into());
            }
        }
        issues
    }

    /// Unconditional state marginals `N(E[x_t], Cov(x_t))` for `t = 1..=steps`.
    pub fn prior_marginals(&self, steps: usize) -> Vec<MomentGaussian> {
        let mut out = Vec::with_capacity(steps);
        let mut mean = self.pi.clone();
        let mut cov = self.pi_cov.clone();
        for _ in 0..steps {
            out.push(MomentGaussian::from_parts(mean.clone(), cov.clone()));
            mean = &self.a * mean;
            cov = symmetrize(&(&self.a * cov * self.a.transpose() + &self.q));
        }
        out
    }
}

/// Simulated hidden states and observations, indexed `[agent][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub states: Vec<Vec<DVector<f64>>>,
    pub observations: Vec<Vec<DVector<f64>>>,
    pub seed: u64,
}

impl TrajectoryBundle {
    pub fn agents(&self) -> usize {
        self.states.len()
    }

    pub fn steps(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Hidden states of every agent at step `t` (0-based).
    pub fn states_at(&self, t: usize) -> impl Iterator<Item = &DVector<f64>> + Clone + '_ {
        self.states.iter().map(move |traj| &traj[t])
    }

    pub fn observations_at(&self, t: usize) -> impl Iterator<Item = &DVector<f64>> + Clone + '_ {
        self.observations.iter().map(move |traj| &traj[t])
    }
}

/// Lower Cholesky factor of a covariance that the model has already validated.
fn noise_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    cholesky_with_jitter(cov, "noise covariance")
        .map(|(c, _)| c.l())
        .unwrap_or_else(|_| DMatrix::zeros(cov.nrows(), cov.ncols()))
}

fn gaussian_draw(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * z
}

/// Draws `agents` independent trajectories of length `steps`.
///
/// Agent `m` uses ChaCha stream `m` of the generator seeded with `seed`, so
/// the result does not depend on how the work is split across threads.
pub fn simulate(
    params: &GhmmParams,
    agents: usize,
    steps: usize,
    seed: u64,
) -> Result<TrajectoryBundle> {
    let params = params.clone().validate()?;
    if agents == 0 || steps == 0 {
        return Err(Error::InvalidConfig(format!(
            "simulate needs at least one agent and one step (got M={agents}, T={steps})"
        )));
    }
    let init_l = noise_factor(&params.pi_cov);
    let q_l = noise_factor(&params.q);
    let r_l = noise_factor(&params.r);

    let (states, observations): (Vec<_>, Vec<_>) = (0..agents)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let mut xs = Vec::with_capacity(steps);
            let mut os = Vec::with_capacity(steps);
            let mut x = &params.pi + gaussian_draw(&mut rng, &init_l);
            for t in 0..steps {
                if t > 0 {
                    x = &params.a * &x + gaussian_draw(&mut rng, &q_l);
                }
                os.push(&params.c * &x + gaussian_draw(&mut rng, &r_l));
                xs.push(x.clone());
            }
            (xs, os)
        })
        .unzip();

    Ok(TrajectoryBundle {
        states,
        observations,
        seed,
    })
}

/// Gaussian summary of the observations recorded at one step.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregateEntry {
    /// Sample mean and covariance of a population's observations.
    Population {
        mu_hat: DVector<f64>,
        p_hat: DMatrix<f64>,
    },
    /// A single agent's observation. The upward message then uses the
    /// observation likelihood `p(o_t | x_t)` directly instead of a fitted density.
    SingleAgent { obs: DVector<f64> },
}

impl AggregateEntry {
    /// Builds a population entry, requiring `p_hat` to be symmetric positive definite.
    pub fn population(mu_hat: DVector<f64>, p_hat: DMatrix<f64>) -> Result<Self> {
        MomentGaussian::new(mu_hat.clone(), p_hat.clone())?;
        Ok(Self::Population {
            mu_hat,
            p_hat: symmetrize(&p_hat),
        })
    }

    pub fn mu_hat(&self) -> &DVector<f64> {
        match self {
            Self::Population { mu_hat, .. } => mu_hat,
            Self::SingleAgent { obs } => obs,
        }
    }

    /// Fitted covariance; for a single agent this is the model's `R`.
    pub fn p_hat<'a>(&'a self, params: &'a GhmmParams) -> &'a DMatrix<f64> {
        match self {
            Self::Population { p_hat, .. } => p_hat,
            Self::SingleAgent { .. } => &params.r,
        }
    }

    pub fn is_single_agent(&self) -> bool {
        matches!(self, Self::SingleAgent { .. })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat().len()
    }
}

/// Per-step aggregate observation summaries for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateObservations {
    pub entries: Vec<AggregateEntry>,
}

impl AggregateObservations {
    pub fn new(entries: Vec<AggregateEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[AggregateEntry] {
        &self.entries
    }
}

/// Fits `N(mu_hat_t, P_hat_t)` to the observations at each step.
///
/// The covariance uses the unbiased `M - 1` divisor; if it fails to factor,
/// `1e-9 * trace / d_o` (floored at `1e-12`) is added to the diagonal. A
/// single-agent bundle yields [`AggregateEntry::SingleAgent`] entries.
pub fn fit_aggregate(bundle: &TrajectoryBundle) -> Result<AggregateObservations> {
    let m = bundle.agents();
    let steps = bundle.steps();
    if m == 0 || steps == 0 {
        return Err(Error::InvalidConfig(
            "fit_aggregate on an empty bundle".into(),
        ));
    }
    if m == 1 {
        let entries = bundle.observations[0]
            .iter()
            .map(|o| AggregateEntry::SingleAgent { obs: o.clone() })
            .collect();
        return Ok(AggregateObservations { entries });
    }

    let mut entries = Vec::with_capacity(steps);
    for t in 0..steps {
        let (mu_hat, cov) = sample_moments(bundle.observations_at(t), m);
        let d = cov.nrows();
        // Fewer than d_o + 1 agents: singular by construction, even if roundoff lets it factor.
        let jitter = if m <= d {
            jitter_for(&cov)
        } else {
            cholesky_with_jitter(&cov, "aggregate covariance")
                .map_err(|_| Error::DegenerateAggregate { t })?
                .1
        };
        let p_hat = cov + DMatrix::identity(d, d) * jitter;
        entries.push(AggregateEntry::Population { mu_hat, p_hat });
    }
    Ok(AggregateObservations { entries })
}

/// Sample mean and unbiased sample covariance (divisor `n - 1`) of `n >= 2` vectors.
pub fn sample_moments<'a, I>(samples: I, n: usize) -> (DVector<f64>, DMatrix<f64>)
where
    I: Iterator<Item = &'a DVector<f64>> + Clone,
{
    let first = samples.clone().next().expect("at least one sample");
    let d = first.len();
    let mut mean = DVector::zeros(d);
    for s in samples.clone() {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let dev = s - &mean;
        cov += &dev * dev.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, symmetrize(&cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_model_is_valid() {
        let p = GhmmParams::reference(0.05).validate().unwrap();
        assert_eq!(p.state_dim(), 2);
        assert_eq!(p.obs_dim(), 1);
        assert!((p.r[(0, 0)] - 0.035).abs() < 1e-15);
    }

    #[test]
    fn zero_process_noise_is_rejected() {
        let mut p = GhmmParams::reference(0.05);
        p.q = DMatrix::zeros(2, 2);
        match p.validate() {
            Err(Error::InvalidModel(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].field, "Q");
                assert!(issues[0].reason.contains("positive definite"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let mut p = GhmmParams::reference(0.05);
        p.a = DMatrix::zeros(2, 3);
        p.r = dmatrix![-1.0];
        match p.validate() {
            Err(Error::InvalidModel(issues)) => {
                let fields: Vec<_> = issues.iter().map(|i| i.field).collect();
                assert_eq!(fields, ["A", "R"]);
                assert!(issues[0].reason.contains("shape"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bundle_shape() {
        let b = simulate(&GhmmParams::reference(0.05), 200, 100, 1).unwrap();
        assert_eq!(b.agents(), 200);
        assert_eq!(b.steps(), 100);
        assert_eq!(b.states[17][42].len(), 2);
        assert_eq!(b.observations[199][99].len(), 1);
    }

    #[test]
    fn simulation_is_reproducible() {
        let p = GhmmParams::reference(0.05);
        assert_eq!(
            simulate(&p, 30, 12, 9).unwrap(),
            simulate(&p, 30, 12, 9).unwrap()
        );
        assert_ne!(
            simulate(&p, 30, 12, 9).unwrap(),
            simulate(&p, 30, 12, 10).unwrap()
        );
    }

    #[test]
    fn noiseless_limit_follows_deterministic_iteration() {
        let eps = 1e-12;
        let mut p = GhmmParams::reference(0.05);
        p.q = DMatrix::identity(2, 2) * eps;
        p.r = DMatrix::identity(1, 1) * eps;
        p.pi_cov = DMatrix::identity(2, 2) * eps;
        let b = simulate(&p, 3, 40, 5).unwrap();
        let mut x = p.pi.clone();
        for t in 0..40 {
            for m in 0..3 {
                assert!((&b.states[m][t] - &x).amax() < 1e-4);
                assert!((&b.observations[m][t] - &p.c * &x).amax() < 1e-4);
            }
            x = &p.a * x;
        }
    }

    #[test]
    fn two_point_sample_covariance() {
        let bundle = TrajectoryBundle {
            states: vec![vec![dvector![0.0]], vec![dvector![0.0]]],
            observations: vec![vec![dvector![0.0]], vec![dvector![2.0]]],
            seed: 0,
        };
        let agg = fit_aggregate(&bundle).unwrap();
        match &agg.entries[0] {
            AggregateEntry::Population { mu_hat, p_hat } => {
                assert_eq!(mu_hat[0], 1.0);
                assert_eq!(p_hat[(0, 0)], 2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_spread_gets_floor_jitter() {
        let o = dvector![0.5, -1.0];
        let bundle = TrajectoryBundle {
            states: vec![vec![dvector![0.0]]; 3],
            observations: vec![vec![o.clone()]; 3],
            seed: 0,
        };
        let agg = fit_aggregate(&bundle).unwrap();
        match &agg.entries[0] {
            AggregateEntry::Population { mu_hat, p_hat } => {
                assert_eq!(mu_hat, &o);
                assert_eq!(p_hat, &(DMatrix::identity(2, 2) * 1e-12));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_agents_for_the_output_dimension_are_jittered() {
        // Two points in the plane: the sample covariance has rank one.
        let bundle = TrajectoryBundle {
            states: vec![vec![dvector![0.0]]; 2],
            observations: vec![vec![dvector![1.0, 2.0]], vec![dvector![3.0, 6.0]]],
            seed: 0,
        };
        let agg = fit_aggregate(&bundle).unwrap();
        let p_hat = match &agg.entries[0] {
            AggregateEntry::Population { p_hat, .. } => p_hat.clone(),
            other => panic!("unexpected {other:?}"),
        };
        assert!(crate::gauss::min_eigenvalue(&p_hat) > 0.0);
        assert!((p_hat[(0, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn single_agent_uses_observation_and_model_noise() {
        let p = GhmmParams::reference(0.05);
        let b = simulate(&p, 1, 4, 3).unwrap();
        let agg = fit_aggregate(&b).unwrap();
        for (t, e) in agg.entries.iter().enumerate() {
            assert!(e.is_single_agent());
            assert_eq!(e.mu_hat(), &b.observations[0][t]);
            assert_eq!(e.p_hat(&p), &p.r);
        }
    }

    #[test]
    fn prior_marginals_follow_moment_recursion() {
        let p = GhmmParams::reference(0.05);
        let m = p.prior_marginals(3);
        assert_eq!(m[0].mean(), &p.pi);
        assert!((m[1].mean() - dvector![1.0, -0.05]).amax() < 1e-15);
        let cov1 = &p.a * &p.pi_cov * p.a.transpose() + &p.q;
        assert!((m[1].cov() - cov1).amax() < 1e-15);
    }
}

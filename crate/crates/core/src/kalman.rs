//! Single-agent references: Kalman filter, RTS smoother, brute-force joint
//! Gaussian conditioning, and the M-independent-filters aggregate baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cgfb::MarginalTrajectory;
use crate::error::{Error, Result};
use crate::gauss::{cholesky, symmetrize, MomentGaussian};
use crate::model::{GhmmParams, TrajectoryBundle};

/// Cap on `T * (d_x + d_o)` for [`joint_oracle`].
pub const JOINT_ORACLE_CAP: usize = 512;

/// Filtered state after a correction, with the gain that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

impl KalmanState {
    pub fn to_moment(&self) -> MomentGaussian {
        MomentGaussian::from_parts(self.mean.clone(), self.cov.clone())
    }
}

/// Mixture mean and covariance of `M` filter posteriors at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct KfAggregateSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `(A mu, Q + A P A^T)`.
pub fn kf_predict(
    params: &GhmmParams,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mean_pred = &params.a * mean;
    let cov_pred = symmetrize(&(&params.q + &params.a * cov * params.a.transpose()));
    (mean_pred, cov_pred)
}

/// Measurement update with gain `K = P C^T (R + C P C^T)^-1`.
///
/// The covariance is computed in Joseph form
/// `(I - K C) P (I - K C)^T + K R K^T`, which equals `(I - K C) P` in exact
/// arithmetic and stays symmetric positive definite under rounding.
pub fn kf_correct(
    params: &GhmmParams,
    mean_pred: &DVector<f64>,
    cov_pred: &DMatrix<f64>,
    obs: &DVector<f64>,
) -> Result<KalmanState> {
    let c = &params.c;
    let innovation_cov = symmetrize(&(&params.r + c * cov_pred * c.transpose()));
    let chol = nalgebra::Cholesky::new(innovation_cov).ok_or(Error::SingularInnovation)?;
    // K^T = S^-1 C P
    let gain = chol.solve(&(c * cov_pred)).transpose();
    let mean = mean_pred + &gain * (obs - c * mean_pred);
    let n = cov_pred.nrows();
    let i_kc = DMatrix::identity(n, n) - &gain * c;
    let cov =
        symmetrize(&(&i_kc * cov_pred * i_kc.transpose() + &gain * &params.r * gain.transpose()));
    Ok(KalmanState { mean, cov, gain })
}

/// Filtered posteriors `p(x_t | o_1..o_t)` for every step. The first step
/// corrects the initial density directly.
pub fn kalman_filter(
    params: &GhmmParams,
    observations: &[DVector<f64>],
) -> Result<Vec<KalmanState>> {
    let mut out: Vec<KalmanState> = Vec::with_capacity(observations.len());
    for (t, obs) in observations.iter().enumerate() {
        let (mp, cp) = match out.last() {
            None => (params.pi.clone(), params.pi_cov.clone()),
            Some(prev) => kf_predict(params, &prev.mean, &prev.cov),
        };
        let state = kf_correct(params, &mp, &cp, obs).map_err(|e| Error::AtTime {
            t,
            source: Box::new(e),
        })?;
        out.push(state);
    }
    Ok(out)
}

/// Fixed-interval smoothed marginals `p(x_t | o_1..o_T)`.
///
/// Backward gain `G_t = P_{t|t} A^T P_{t+1|t}^-1`, with
/// `mu_{t|T} = mu_{t|t} + G_t (mu_{t+1|T} - mu_{t+1|t})` and
/// `P_{t|T} = P_{t|t} + G_t (P_{t+1|T} - P_{t+1|t}) G_t^T`.
pub fn rts_smooth(
    params: &GhmmParams,
    observations: &[DVector<f64>],
) -> Result<MarginalTrajectory> {
    if observations.is_empty() {
        return Err(Error::InvalidConfig(
            "rts_smooth needs at least one observation".into(),
        ));
    }
    let filtered = kalman_filter(params, observations)?;
    let n = filtered.len();
    let mut means = vec![DVector::zeros(0); n];
    let mut covs = vec![DMatrix::zeros(0, 0); n];
    means[n - 1] = filtered[n - 1].mean.clone();
    covs[n - 1] = filtered[n - 1].cov.clone();
    for t in (0..n - 1).rev() {
        let f = &filtered[t];
        let (mp, cp) = kf_predict(params, &f.mean, &f.cov);
        // G^T = P_pred^-1 A P_filt
        let chol = cholesky(&cp, "predicted covariance").map_err(|e| Error::AtTime {
            t,
            source: Box::new(e),
        })?;
        let g = chol.solve(&(&params.a * &f.cov)).transpose();
        means[t] = &f.mean + &g * (&means[t + 1] - mp);
        covs[t] = symmetrize(&(&f.cov + &g * (&covs[t + 1] - cp) * g.transpose()));
    }
    Ok(MarginalTrajectory::new(
        means
            .into_iter()
            .zip(covs)
            .map(|(m, c)| MomentGaussian::from_parts(m, c))
            .collect(),
    ))
}

/// Exact smoothing marginals by conditioning the full joint Gaussian of
/// `(x_1..x_T, o_1..o_T)` on the observations.
pub fn joint_oracle(
    params: &GhmmParams,
    observations: &[DVector<f64>],
) -> Result<MarginalTrajectory> {
    let steps = observations.len();
    let dx = params.state_dim();
    let d_o = params.obs_dim();
    let dim = steps * (dx + d_o);
    if dim > JOINT_ORACLE_CAP {
        return Err(Error::DimensionCapExceeded {
            dim,
            cap: JOINT_ORACLE_CAP,
        });
    }
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "joint_oracle needs at least one observation".into(),
        ));
    }
    let nx = steps * dx;
    let no = steps * d_o;

    // Unconditional moments: E[x_t] = A^(t-1) pi, Cov(x_s, x_t) = Cov(x_s) (A^(t-s))^T for s <= t.
    let prior = params.prior_marginals(steps);
    let mut sxx = DMatrix::zeros(nx, nx);
    for (s, marginal) in prior.iter().enumerate() {
        let mut block = marginal.cov().clone();
        for t in s..steps {
            if t > s {
                block *= params.a.transpose();
            }
            sxx.view_mut((s * dx, t * dx), (dx, dx)).copy_from(&block);
            sxx.view_mut((t * dx, s * dx), (dx, dx))
                .copy_from(&block.transpose());
        }
    }
    let mut mx = DVector::zeros(nx);
    for (t, p) in prior.iter().enumerate() {
        mx.rows_mut(t * dx, dx).copy_from(p.mean());
    }

    // o = (I_T ⊗ C) x + v
    let mut big_c = DMatrix::zeros(no, nx);
    let mut big_r = DMatrix::zeros(no, no);
    for t in 0..steps {
        big_c
            .view_mut((t * d_o, t * dx), (d_o, dx))
            .copy_from(&params.c);
        big_r
            .view_mut((t * d_o, t * d_o), (d_o, d_o))
            .copy_from(&params.r);
    }
    let sxo = &sxx * big_c.transpose();
    let soo = symmetrize(&(&big_c * &sxo + big_r));
    let mo = &big_c * &mx;
    let mut o = DVector::zeros(no);
    for (t, obs) in observations.iter().enumerate() {
        if obs.len() != d_o {
            return Err(Error::DimensionMismatch {
                context: "observation".into(),
                expected: d_o,
                found: obs.len(),
            });
        }
        o.rows_mut(t * d_o, d_o).copy_from(obs);
    }

    let chol = cholesky(&soo, "joint observation covariance")?;
    let post_mean = &mx + &sxo * chol.solve(&(o - mo));
    let post_cov = &sxx - &sxo * chol.solve(&sxo.transpose());

    Ok(MarginalTrajectory::new(
        (0..steps)
            .map(|t| {
                let mean = post_mean.rows(t * dx, dx).into_owned();
                let cov = post_cov.view((t * dx, t * dx), (dx, dx)).into_owned();
                MomentGaussian::from_parts(mean, cov)
            })
            .collect(),
    ))
}

/// Mixture mean and covariance of a set of Gaussian estimates:
/// `mu = (1/M) sum mu_m`, `P = (1/M) sum [P_m + (mu_m - mu)(mu_m - mu)^T]`.
pub fn mixture_summary<'a, I>(estimates: I) -> KfAggregateSummary
where
    I: IntoIterator<Item = (&'a DVector<f64>, &'a DMatrix<f64>)> + Clone,
{
    let mut count = 0usize;
    let mut mean: Option<DVector<f64>> = None;
    for (m, _) in estimates.clone() {
        count += 1;
        match &mut mean {
            Some(acc) => *acc += m,
            None => mean = Some(m.clone()),
        }
    }
    let mean = mean.expect("at least one estimate") / count as f64;
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    for (m, p) in estimates {
        let dev = m - &mean;
        cov += p + &dev * dev.transpose();
    }
    KfAggregateSummary {
        mean,
        cov: symmetrize(&(cov / count as f64)),
    }
}

/// Runs one Kalman filter per agent with known associations and summarizes
/// the `M` posteriors at every step. Index `T - 1` is the end-of-horizon summary.
pub fn kf_aggregate(
    params: &GhmmParams,
    bundle: &TrajectoryBundle,
) -> Result<Vec<KfAggregateSummary>> {
    if bundle.agents() == 0 {
        return Err(Error::InvalidConfig(
            "kf_aggregate needs at least one agent".into(),
        ));
    }
    let filters = bundle
        .observations
        .par_iter()
        .map(|obs| kalman_filter(params, obs))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..bundle.steps())
        .map(|t| mixture_summary(filters.iter().map(|f| (&f[t].mean, &f[t].cov))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_params() -> GhmmParams {
        GhmmParams::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dvector![0.0],
            dmatrix![1.0],
        )
        .unwrap()
    }

    #[test]
    fn predict_on_reference_model() {
        let p = GhmmParams::reference(0.05);
        let (m, c) = kf_predict(&p, &p.pi, &p.pi_cov);
        assert!((m - dvector![1.0, -0.05]).amax() < 1e-15);
        let expected = DMatrix::identity(2, 2) * 0.005 + &p.a * &p.pi_cov * p.a.transpose();
        assert!((c - expected).amax() < 1e-15);
    }

    #[test]
    fn predict_identity_small_noise() {
        let mut p = scalar_params();
        p.q = dmatrix![1e-12];
        let (m, c) = kf_predict(&p, &dvector![3.0], &dmatrix![2.0]);
        assert_eq!(m[0], 3.0);
        assert!((c[(0, 0)] - 2.0).abs() <= 2e-12);
    }

    #[test]
    fn scalar_correction() {
        let p = scalar_params();
        let s = kf_correct(&p, &dvector![0.0], &dmatrix![1.0], &dvector![2.0]).unwrap();
        assert!((s.gain[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.mean[0] - 1.0).abs() < 1e-15);
        assert!((s.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uninformative_observation_keeps_prediction() {
        let mut p = GhmmParams::reference(0.05);
        p.c = DMatrix::zeros(1, 2);
        let cp = dmatrix![1.0, 0.1; 0.1, 2.0];
        let s = kf_correct(&p, &p.pi, &cp, &dvector![5.0]).unwrap();
        assert_eq!(s.gain, DMatrix::zeros(2, 1));
        assert_eq!(s.mean, p.pi);
        assert!((s.cov - cp).amax() < 1e-15);
    }

    #[test]
    fn joseph_form_matches_simple_form() {
        let p = GhmmParams::reference(0.05);
        let cp = dmatrix![1.2, 0.3; 0.3, 0.8];
        let s = kf_correct(&p, &p.pi, &cp, &dvector![0.01]).unwrap();
        let simple = (DMatrix::identity(2, 2) - &s.gain * &p.c) * &cp;
        assert!((s.cov - simple).amax() < 1e-10);
    }

    #[test]
    fn smoother_single_step_is_filter() {
        let p = GhmmParams::reference(0.05);
        let obs = vec![dvector![0.03]];
        let sm = rts_smooth(&p, &obs).unwrap();
        let f = kalman_filter(&p, &obs).unwrap();
        assert_eq!(sm[0].mean(), &f[0].mean);
        assert_eq!(sm[0].cov(), &f[0].cov);
    }

    #[test]
    fn oracle_single_step_is_one_correction() {
        let p = GhmmParams::reference(0.05);
        let obs = vec![dvector![0.03]];
        let o = joint_oracle(&p, &obs).unwrap();
        let s = kf_correct(&p, &p.pi, &p.pi_cov, &obs[0]).unwrap();
        assert!((o[0].mean() - s.mean).amax() < 1e-12);
        assert!((o[0].cov() - s.cov).amax() < 1e-12);
    }

    #[test]
    fn oracle_enforces_cap() {
        let p = GhmmParams::reference(0.05);
        let obs = vec![dvector![0.0]; 171];
        assert!(matches!(
            joint_oracle(&p, &obs),
            Err(Error::DimensionCapExceeded { dim: 513, cap: 512 })
        ));
        assert!(joint_oracle(&p, &obs[..170]).is_ok());
    }

    #[test]
    fn mixture_of_two_scalars() {
        let means = [dvector![0.0], dvector![2.0]];
        let covs = [dmatrix![1.0], dmatrix![1.0]];
        let s = mixture_summary(means.iter().zip(covs.iter()));
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.cov[(0, 0)], 2.0);
    }

    #[test]
    fn aggregate_single_agent_is_filter() {
        let p = GhmmParams::reference(0.05);
        let b = crate::model::simulate(&p, 1, 6, 2).unwrap();
        let agg = kf_aggregate(&p, &b).unwrap();
        let f = kalman_filter(&p, &b.observations[0]).unwrap();
        assert!((&agg[5].mean - &f[5].mean).amax() < 1e-15);
        assert!((&agg[5].cov - &f[5].cov).amax() < 1e-15);
    }

    #[test]
    fn aggregate_identical_agents_has_no_spread() {
        let p = GhmmParams::reference(0.05);
        let b = crate::model::simulate(&p, 1, 6, 2).unwrap();
        let shared = TrajectoryBundle {
            states: vec![b.states[0].clone(); 4],
            observations: vec![b.observations[0].clone(); 4],
            seed: 2,
        };
        let agg = kf_aggregate(&p, &shared).unwrap();
        let f = kalman_filter(&p, &b.observations[0]).unwrap();
        for t in 0..6 {
            assert!((&agg[t].cov - &f[t].cov).amax() < 1e-14);
        }
    }
}

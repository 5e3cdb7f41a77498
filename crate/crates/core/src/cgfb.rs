//! Collective Gaussian forward-backward message passing.
//!
//! Each step `t` of the chain carries four canonical-form messages:
//!
//! * forward `alpha_t(x_t)`, propagated from `t - 1` through the dynamics,
//! * backward `beta_t(x_t)`, propagated from `t + 1`,
//! * upward `gamma_t(x_t)`, the aggregate observation's pull on the state,
//! * downward `xi_t(o_t)`, the model's current prediction of the observation.
//!
//! The messages are iterated to a fixed point by alternating a forward pass
//! (upward at `t - 1`, forward at `t`, downward at `t`, for increasing `t`)
//! with a backward pass (upward at `t + 1`, backward at `t`, downward at `t`,
//! for decreasing `t`). The population state density at `t` is then
//! `n_t ∝ alpha_t beta_t gamma_t`.
//!
//! All step indices in this module are 0-based.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, MessageKind, Result};
use crate::gauss::{
    cholesky, cholesky_with_jitter, min_eigenvalue, repair_psd, spd_inverse, symmetrize,
    to_canonical, CanonicalGaussian, MomentGaussian,
};
use crate::model::{AggregateEntry, AggregateObservations, GhmmParams};

/// Iteration controls for [`run_cgfb`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgfbConfig {
    /// Upper bound on full (forward + backward) sweeps.
    pub max_iters: usize,
    /// Convergence threshold on the sup-norm change of every message parameter over one sweep.
    pub conv_tol: f64,
    /// Weight on the previous value when blending each update, in `[0, 1)`.
    pub damping: f64,
}

impl Default for CgfbConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            conv_tol: 1e-9,
            damping: 0.0,
        }
    }
}

impl CgfbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.conv_tol.is_nan() || self.conv_tol <= 0.0 {
            return Err(Error::InvalidConfig("conv_tol must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig("damping must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Forward, backward and upward messages are over `x_t`; downward messages are over `o_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    pub fwd: Vec<CanonicalGaussian>,
    pub bwd: Vec<CanonicalGaussian>,
    pub up: Vec<CanonicalGaussian>,
    pub down: Vec<CanonicalGaussian>,
}

impl MessageSet {
    /// Every message flat.
    pub fn flat(steps: usize, state_dim: usize, obs_dim: usize) -> Self {
        Self {
            fwd: vec![CanonicalGaussian::flat(state_dim); steps],
            bwd: vec![CanonicalGaussian::flat(state_dim); steps],
            up: vec![CanonicalGaussian::flat(state_dim); steps],
            down: vec![CanonicalGaussian::flat(obs_dim); steps],
        }
    }

    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwd.is_empty()
    }

    /// Sup-norm difference over every parameter of every message.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let families = [
            (&self.fwd, &other.fwd),
            (&self.bwd, &other.bwd),
            (&self.up, &other.up),
            (&self.down, &other.down),
        ];
        families
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    /// Drops the first `n` steps and appends `n` flat steps at the end.
    pub(crate) fn shift_left(&mut self, n: usize) {
        let n = n.min(self.len());
        for family in [&mut self.fwd, &mut self.bwd, &mut self.up, &mut self.down] {
            let d = family[0].dim();
            family.drain(..n);
            family.extend(std::iter::repeat_n(CanonicalGaussian::flat(d), n));
        }
    }
}

/// Per-step state densities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarginalTrajectory {
    pub steps: Vec<MomentGaussian>,
}

impl MarginalTrajectory {
    pub fn new(steps: Vec<MomentGaussian>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MomentGaussian> {
        self.steps.iter()
    }

    pub fn last(&self) -> Option<&MomentGaussian> {
        self.steps.last()
    }
}

impl std::ops::Index<usize> for MarginalTrajectory {
    type Output = MomentGaussian;

    fn index(&self, t: usize) -> &MomentGaussian {
        &self.steps[t]
    }
}

/// Per-sweep residuals. One entry per full forward + backward sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub elapsed_ms: f64,
}

impl ConvergenceReport {
    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgfbOutput {
    pub messages: MessageSet,
    pub marginals: MarginalTrajectory,
    pub report: ConvergenceReport,
}

/// Model-dependent matrices every update reuses.
#[derive(Debug, Clone)]
pub struct MessagePasser {
    params: GhmmParams,
    q_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    /// `A^T Q^-1`
    at_q_inv: DMatrix<f64>,
    /// `A^T Q^-1 A`
    at_q_inv_a: DMatrix<f64>,
    /// `R^-1 C`
    r_inv_c: DMatrix<f64>,
    /// `C^T R^-1 C`
    ct_r_inv_c: DMatrix<f64>,
    prior: CanonicalGaussian,
}

fn inner_cholesky(
    m: &DMatrix<f64>,
    t: usize,
    kind: MessageKind,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(symmetrize(m)).ok_or(Error::SingularInnerMatrix { t, kind })
}

fn repaired(
    info: DMatrix<f64>,
    eta: DVector<f64>,
    t: usize,
    kind: MessageKind,
) -> Result<CanonicalGaussian> {
    let info = repair_psd(&info).map_err(|min_eigenvalue| Error::IndefiniteMessage {
        t,
        kind,
        min_eigenvalue,
    })?;
    Ok(CanonicalGaussian::from_parts(info, eta))
}

impl MessagePasser {
    pub fn new(params: &GhmmParams) -> Result<Self> {
        let params = params.clone().validate()?;
        let q_inv = spd_inverse(&params.q, "Q")?;
        let r_inv = spd_inverse(&params.r, "R")?;
        let at_q_inv = params.a.transpose() * &q_inv;
        let at_q_inv_a = symmetrize(&(&at_q_inv * &params.a));
        let r_inv_c = &r_inv * &params.c;
        let ct_r_inv_c = symmetrize(&(params.c.transpose() * &r_inv_c));
        let prior = to_canonical(&MomentGaussian::new(
            params.pi.clone(),
            params.pi_cov.clone(),
        )?)?;
        Ok(Self {
            params,
            q_inv,
            r_inv,
            at_q_inv,
            at_q_inv_a,
            r_inv_c,
            ct_r_inv_c,
            prior,
        })
    }

    pub fn params(&self) -> &GhmmParams {
        &self.params
    }

    /// `(Pi^-1, Pi^-1 pi)`, the forward message at the first step.
    pub fn initial_forward(&self) -> &CanonicalGaussian {
        &self.prior
    }

    fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.params.obs_dim()
    }

    /// Forward message at `t` from the forward and upward messages at `t - 1`:
    ///
    /// ```text
    /// Lambda_f = Q^-1 - Q^-1 A W^-1 A^T Q^-1
    /// eta_f    = Q^-1 A W^-1 (eta_f' + eta_u'),   W = A^T Q^-1 A + Lambda_f' + Lambda_u'
    /// ```
    pub fn forward(
        &self,
        prev_fwd: &CanonicalGaussian,
        prev_up: &CanonicalGaussian,
        t: usize,
    ) -> Result<CanonicalGaussian> {
        let kind = MessageKind::Forward;
        let w = &self.at_q_inv_a + prev_fwd.info_matrix() + prev_up.info_matrix();
        let chol = inner_cholesky(&w, t, kind)?;
        let x = chol.solve(&self.at_q_inv);
        let info = &self.q_inv - self.at_q_inv.transpose() * x;
        let h = prev_fwd.info_vector() + prev_up.info_vector();
        let eta = self.at_q_inv.transpose() * chol.solve(&h);
        repaired(info, eta, t, kind)
    }

    /// Backward message at `t` from the backward and upward messages at `t + 1`:
    ///
    /// ```text
    /// Lambda_b = A^T Q^-1 W^-1 (Lambda_b' + Lambda_u') A
    /// eta_b    = A^T Q^-1 W^-1 (eta_b' + eta_u'),   W = Q^-1 + Lambda_b' + Lambda_u'
    /// ```
    ///
    /// Not repaired to PSD: with aggregate data the upward messages, and hence
    /// the backward ones, may legitimately have negative curvature.
    pub fn backward(
        &self,
        next_bwd: &CanonicalGaussian,
        next_up: &CanonicalGaussian,
        t: usize,
    ) -> Result<CanonicalGaussian> {
        let s = next_bwd.info_matrix() + next_up.info_matrix();
        let w = &self.q_inv + &s;
        let chol = inner_cholesky(&w, t, MessageKind::Backward)?;
        let info = &self.at_q_inv * chol.solve(&(s * &self.params.a));
        let h = next_bwd.info_vector() + next_up.info_vector();
        let eta = &self.at_q_inv * chol.solve(&h);
        Ok(CanonicalGaussian::from_parts(symmetrize(&info), eta))
    }

    /// Downward message over `o_t` from the forward and backward messages at `t`:
    ///
    /// ```text
    /// Lambda_d = R^-1 - R^-1 C W^-1 C^T R^-1
    /// eta_d    = R^-1 C W^-1 (eta_f + eta_b),   W = C^T R^-1 C + Lambda_f + Lambda_b
    /// ```
    pub fn downward(
        &self,
        fwd: &CanonicalGaussian,
        bwd: &CanonicalGaussian,
        t: usize,
    ) -> Result<CanonicalGaussian> {
        let kind = MessageKind::Downward;
        let w = &self.ct_r_inv_c + fwd.info_matrix() + bwd.info_matrix();
        let chol = inner_cholesky(&w, t, kind)?;
        let x = chol.solve(&self.r_inv_c.transpose());
        let info = &self.r_inv - &self.r_inv_c * x;
        let h = fwd.info_vector() + bwd.info_vector();
        let eta = &self.r_inv_c * chol.solve(&h);
        repaired(info, eta, t, kind)
    }

    /// Upward message at `t` from the aggregate summary and the downward message:
    ///
    /// ```text
    /// J        = P_hat^-1 - Lambda_d
    /// Lambda_u = C^T R^-1 (R^-1 + J)^-1 J C      (= C^T (R + J^-1)^-1 C when J is invertible)
    /// eta_u    = C^T R^-1 (R^-1 + J)^-1 (P_hat^-1 mu_hat - eta_d)
    /// ```
    ///
    /// Only `R^-1 + J` has to be positive definite. `J` itself goes indefinite
    /// whenever the fitted spread exceeds the model's predicted spread, which
    /// sampling noise makes routine. A single-agent entry gives the
    /// observation likelihood `(C^T R^-1 C, C^T R^-1 o)`.
    pub fn upward(
        &self,
        entry: &AggregateEntry,
        down: &CanonicalGaussian,
        t: usize,
    ) -> Result<CanonicalGaussian> {
        let (mu_hat, p_hat) = match entry {
            AggregateEntry::SingleAgent { obs } => {
                let eta = self.r_inv_c.transpose() * obs;
                return Ok(CanonicalGaussian::from_parts(self.ct_r_inv_c.clone(), eta));
            }
            AggregateEntry::Population { mu_hat, p_hat } => (mu_hat, p_hat),
        };
        let (p_chol, _) = cholesky_with_jitter(p_hat, "aggregate covariance")
            .map_err(|_| Error::DegenerateAggregate { t })?;
        let p_inv = p_chol.inverse();
        let j = symmetrize(&(&p_inv - down.info_matrix()));
        let h = &p_inv * mu_hat - down.info_vector();
        let total = &self.r_inv + &j;
        let (chol, _) = cholesky_with_jitter(&total, "upward inner matrix").map_err(|_| {
            Error::IndefiniteDeficit {
                t,
                min_eigenvalue: min_eigenvalue(&total),
            }
        })?;
        let info = self.r_inv_c.transpose() * chol.solve(&(j * &self.params.c));
        let eta = self.r_inv_c.transpose() * chol.solve(&h);
        Ok(CanonicalGaussian::from_parts(symmetrize(&info), eta))
    }

    /// Density `n_t ∝ alpha_t beta_t gamma_t` in moment form.
    pub fn marginal(&self, msgs: &MessageSet, t: usize) -> Result<MomentGaussian> {
        let info = msgs.fwd[t].info_matrix() + msgs.bwd[t].info_matrix() + msgs.up[t].info_matrix();
        let eta = msgs.fwd[t].info_vector() + msgs.bwd[t].info_vector() + msgs.up[t].info_vector();
        let chol = cholesky(&symmetrize(&info), "marginal precision")
            .map_err(|_| Error::ImproperMarginal { t })?;
        let mean = chol.solve(&eta);
        Ok(MomentGaussian::from_parts(mean, chol.inverse()))
    }

    pub fn marginals(&self, msgs: &MessageSet) -> Result<MarginalTrajectory> {
        (0..msgs.len())
            .map(|t| self.marginal(msgs, t))
            .collect::<Result<Vec<_>>>()
            .map(MarginalTrajectory::new)
    }

    /// Messages before the first sweep: the forward boundary is `prior`, every
    /// other forward message is its propagation through the dynamics with
    /// flat upward messages, and all backward, upward and downward messages are flat.
    pub fn initial_messages(&self, steps: usize, prior: &CanonicalGaussian) -> Result<MessageSet> {
        let mut msgs = MessageSet::flat(steps, self.state_dim(), self.obs_dim());
        if steps == 0 {
            return Ok(msgs);
        }
        msgs.fwd[0] = prior.clone();
        for t in 1..steps {
            msgs.fwd[t] = self.forward(&msgs.fwd[t - 1], &msgs.up[t - 1], t)?;
        }
        Ok(msgs)
    }

    /// One full forward + backward sweep in place. Returns the sup-norm change
    /// of every message parameter across the sweep.
    pub fn sweep(
        &self,
        entries: &[AggregateEntry],
        msgs: &mut MessageSet,
        damping: f64,
    ) -> Result<f64> {
        let n = msgs.len();
        let before = msgs.clone();
        let blend = |old: &CanonicalGaussian, new: CanonicalGaussian| {
            if damping > 0.0 {
                new.blend(old, damping)
            } else {
                new
            }
        };

        if n == 1 {
            let up = self.upward(&entries[0], &msgs.down[0], 0)?;
            msgs.up[0] = blend(&msgs.up[0], up);
            let down = self.downward(&msgs.fwd[0], &msgs.bwd[0], 0)?;
            msgs.down[0] = blend(&msgs.down[0], down);
        }

        for t in 1..n {
            let up = self.upward(&entries[t - 1], &msgs.down[t - 1], t - 1)?;
            msgs.up[t - 1] = blend(&msgs.up[t - 1], up);
            let fwd = self.forward(&msgs.fwd[t - 1], &msgs.up[t - 1], t)?;
            msgs.fwd[t] = blend(&msgs.fwd[t], fwd);
            let down = self.downward(&msgs.fwd[t], &msgs.bwd[t], t)?;
            msgs.down[t] = blend(&msgs.down[t], down);
        }

        for t in (0..n.saturating_sub(1)).rev() {
            let up = self.upward(&entries[t + 1], &msgs.down[t + 1], t + 1)?;
            msgs.up[t + 1] = blend(&msgs.up[t + 1], up);
            let bwd = self.backward(&msgs.bwd[t + 1], &msgs.up[t + 1], t)?;
            msgs.bwd[t] = blend(&msgs.bwd[t], bwd);
            let down = self.downward(&msgs.fwd[t], &msgs.bwd[t], t)?;
            msgs.down[t] = blend(&msgs.down[t], down);
        }

        Ok(msgs.max_abs_diff(&before))
    }

    fn check_entries(&self, entries: &[AggregateEntry]) -> Result<()> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig(
                "need at least one aggregate observation".into(),
            ));
        }
        for e in entries {
            if e.dim() != self.obs_dim() {
                return Err(Error::DimensionMismatch {
                    context: "aggregate observation dimension".into(),
                    expected: self.obs_dim(),
                    found: e.dim(),
                });
            }
        }
        Ok(())
    }

    /// Runs the iteration on a chain whose first-step forward message is `prior`.
    ///
    /// `warm` seeds every message except the pinned boundaries; it is ignored
    /// when its length differs from `entries`.
    pub fn run_chain(
        &self,
        entries: &[AggregateEntry],
        prior: &CanonicalGaussian,
        config: &CgfbConfig,
        warm: Option<MessageSet>,
    ) -> Result<CgfbOutput> {
        config.validate()?;
        self.check_entries(entries)?;
        if prior.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward boundary".into(),
                expected: self.state_dim(),
                found: prior.dim(),
            });
        }
        let start = Instant::now();
        let n = entries.len();
        let mut msgs = match warm {
            Some(mut w) if w.len() == n => {
                w.fwd[0] = prior.clone();
                w.bwd[n - 1] = CanonicalGaussian::flat(self.state_dim());
                w
            }
            _ => self.initial_messages(n, prior)?,
        };

        let mut report = ConvergenceReport::default();
        let mut best: Option<(f64, MessageSet)> = None;
        for _ in 0..config.max_iters {
            let residual = self.sweep(entries, &mut msgs, config.damping)?;
            report.residuals.push(residual);
            if residual <= config.conv_tol {
                report.converged = true;
                break;
            }
            if best.as_ref().is_none_or(|(r, _)| residual < *r) {
                best = Some((residual, msgs.clone()));
            }
        }
        report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

        if report.converged {
            let marginals = self.marginals(&msgs)?;
            return Ok(CgfbOutput {
                messages: msgs,
                marginals,
                report,
            });
        }
        let (residual, messages) = best.expect("at least one sweep ran");
        let marginals = self.marginals(&messages)?;
        Err(Error::MaxItersExceeded {
            sweeps: report.sweeps(),
            residual,
            best: Box::new(CgfbOutput {
                messages,
                marginals,
                report,
            }),
        })
    }
}

/// Runs the iteration on the full chain with the model's initial density as
/// the forward boundary.
pub fn run_cgfb(
    params: &GhmmParams,
    agg: &AggregateObservations,
    config: &CgfbConfig,
) -> Result<CgfbOutput> {
    let passer = MessagePasser::new(params)?;
    let prior = passer.initial_forward().clone();
    passer.run_chain(agg.as_slice(), &prior, config, None)
}

fn check_index(msgs: &MessageSet, t: usize, lo: usize, hi_exclusive: usize) -> Result<()> {
    if t < lo || t >= hi_exclusive || hi_exclusive > msgs.len() {
        return Err(Error::InvalidConfig(format!(
            "step index {t} outside [{lo}, {hi_exclusive}) for a chain of length {}",
            msgs.len()
        )));
    }
    Ok(())
}

/// Forward message at `t >= 1` from `msgs.fwd[t - 1]` and `msgs.up[t - 1]`.
pub fn update_forward(
    params: &GhmmParams,
    msgs: &MessageSet,
    t: usize,
) -> Result<CanonicalGaussian> {
    check_index(msgs, t, 1, msgs.len())?;
    MessagePasser::new(params)?.forward(&msgs.fwd[t - 1], &msgs.up[t - 1], t)
}

/// Backward message at `t <= T - 2` from `msgs.bwd[t + 1]` and `msgs.up[t + 1]`.
pub fn update_backward(
    params: &GhmmParams,
    msgs: &MessageSet,
    t: usize,
) -> Result<CanonicalGaussian> {
    check_index(msgs, t, 0, msgs.len().saturating_sub(1))?;
    MessagePasser::new(params)?.backward(&msgs.bwd[t + 1], &msgs.up[t + 1], t)
}

/// Downward message at `t` from `msgs.fwd[t]` and `msgs.bwd[t]`.
pub fn update_downward(
    params: &GhmmParams,
    msgs: &MessageSet,
    t: usize,
) -> Result<CanonicalGaussian> {
    check_index(msgs, t, 0, msgs.len())?;
    MessagePasser::new(params)?.downward(&msgs.fwd[t], &msgs.bwd[t], t)
}

/// Upward message at `t` from `agg[t]` and `msgs.down[t]`.
pub fn update_upward(
    params: &GhmmParams,
    msgs: &MessageSet,
    agg: &AggregateObservations,
    t: usize,
) -> Result<CanonicalGaussian> {
    check_index(msgs, t, 0, msgs.len())?;
    let entry = agg.entries.get(t).ok_or_else(|| Error::LengthMismatch {
        context: "aggregate observations vs messages".into(),
        left: agg.len(),
        right: msgs.len(),
    })?;
    MessagePasser::new(params)?.upward(entry, &msgs.down[t], t)
}

//! Online inference over the latest `K` aggregate observations.
//!
//! Each new observation is appended to a window of at most `K` steps and the
//! message iteration is rerun on that short chain. When the window overflows,
//! the oldest step is dropped and its information is folded into the window's
//! forward boundary: the stored prior becomes the forward message that the
//! evicted step sends to its successor. The naive variant instead advances the
//! boundary with a flat upward message, i.e. it keeps the model's
//! unconditional marginal at the window start and forgets the evicted data.

use std::collections::VecDeque;
use std::time::Instant;

use crate::cgfb::{CgfbConfig, CgfbOutput, MessagePasser, MessageSet};
use crate::error::{Error, Result};
use crate::gauss::{CanonicalGaussian, MomentGaussian};
use crate::model::{AggregateEntry, GhmmParams};

/// Per-step iteration budget: at most 50 sweeps to a sup-norm residual of `1e-9`,
/// warm-started from the previous window.
pub fn window_config() -> CgfbConfig {
    CgfbConfig {
        max_iters: 50,
        conv_tol: 1e-9,
        damping: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowVariant {
    /// Evicted steps are summarized by their forward message.
    WithPrior,
    /// Evicted steps are forgotten; the boundary is the model's unconditional marginal.
    Naive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    window_len: usize,
    prior: CanonicalGaussian,
    buffer: VecDeque<AggregateEntry>,
    /// Number of observations consumed so far.
    current_index: usize,
    messages: Option<MessageSet>,
    last_sweeps: usize,
    last_converged: bool,
}

impl WindowState {
    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Forward boundary of the oldest buffered step.
    pub fn prior(&self) -> &CanonicalGaussian {
        &self.prior
    }

    pub fn buffer(&self) -> &VecDeque<AggregateEntry> {
        &self.buffer
    }

    pub fn current_index(&self) -> usize {
        self.current_index
    }

    /// Converged messages of the latest window.
    pub fn messages(&self) -> Option<&MessageSet> {
        self.messages.as_ref()
    }

    pub fn last_sweeps(&self) -> usize {
        self.last_sweeps
    }

    pub fn last_converged(&self) -> bool {
        self.last_converged
    }
}

/// Empty window of capacity `window_len` whose boundary is the model's initial density.
pub fn sw_init(params: &GhmmParams, window_len: usize) -> Result<WindowState> {
    if window_len == 0 {
        return Err(Error::InvalidWindow);
    }
    let passer = MessagePasser::new(params)?;
    Ok(init_with(&passer, window_len))
}

fn init_with(passer: &MessagePasser, window_len: usize) -> WindowState {
    WindowState {
        window_len,
        prior: passer.initial_forward().clone(),
        buffer: VecDeque::with_capacity(window_len + 1),
        current_index: 0,
        messages: None,
        last_sweeps: 0,
        last_converged: true,
    }
}

fn step_with(
    passer: &MessagePasser,
    mut state: WindowState,
    new_obs: AggregateEntry,
    config: &CgfbConfig,
    variant: WindowVariant,
) -> Result<(WindowState, MomentGaussian)> {
    let t = state.current_index;
    let tag = |e: Error| Error::AtTime {
        t,
        source: Box::new(e),
    };
    let mut warm = state.messages.take();

    if state.buffer.len() == state.window_len {
        // Evict the oldest step, folding it into the boundary.
        let evicted_up = match (variant, &warm) {
            (WindowVariant::WithPrior, Some(msgs)) => msgs.up[0].clone(),
            _ => CanonicalGaussian::flat(state.prior.dim()),
        };
        state.prior = passer.forward(&state.prior, &evicted_up, t).map_err(tag)?;
        state.buffer.pop_front();
        if let Some(msgs) = warm.as_mut() {
            msgs.shift_left(1);
            msgs.fwd[0] = state.prior.clone();
        }
    }
    state.buffer.push_back(new_obs);
    let n = state.buffer.len();

    // Extend the warm start with one step whose forward message is propagated
    // from its predecessor; everything else about the new step starts flat.
    if let Some(msgs) = warm.as_mut() {
        if msgs.len() < n {
            let d = msgs.fwd[0].dim();
            let d_o = msgs.down[0].dim();
            msgs.fwd.push(CanonicalGaussian::flat(d));
            msgs.bwd.push(CanonicalGaussian::flat(d));
            msgs.up.push(CanonicalGaussian::flat(d));
            msgs.down.push(CanonicalGaussian::flat(d_o));
        }
        let last = n - 1;
        if last > 0 {
            msgs.fwd[last] = passer
                .forward(&msgs.fwd[last - 1], &msgs.up[last - 1], last)
                .map_err(tag)?;
        }
    }

    let entries: Vec<AggregateEntry> = state.buffer.iter().cloned().collect();
    let output = match passer.run_chain(&entries, &state.prior, config, warm) {
        Ok(out) => out,
        Err(Error::MaxItersExceeded { best, .. }) => *best,
        Err(e) => return Err(tag(e)),
    };
    let CgfbOutput {
        messages,
        marginals,
        report,
    } = output;
    let filtered = marginals
        .steps
        .into_iter()
        .last()
        .expect("window is never empty");

    state.messages = Some(messages);
    state.last_sweeps = report.sweeps();
    state.last_converged = report.converged;
    state.current_index += 1;
    Ok((state, filtered))
}

/// Consumes one aggregate observation and returns the filtered density of the newest step.
pub fn sw_step(
    params: &GhmmParams,
    state: WindowState,
    new_obs: AggregateEntry,
    config: &CgfbConfig,
) -> Result<(WindowState, MomentGaussian)> {
    let passer = MessagePasser::new(params)?;
    step_with(&passer, state, new_obs, config, WindowVariant::WithPrior)
}

/// [`sw_step`] without carrying evicted information forward.
pub fn sw_step_naive(
    params: &GhmmParams,
    state: WindowState,
    new_obs: AggregateEntry,
    config: &CgfbConfig,
) -> Result<(WindowState, MomentGaussian)> {
    let passer = MessagePasser::new(params)?;
    step_with(&passer, state, new_obs, config, WindowVariant::Naive)
}

/// Result of one [`SlidingWindowFilter::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// 0-based absolute step index.
    pub t: usize,
    pub filtered: MomentGaussian,
    pub sweeps: usize,
    pub converged: bool,
    pub wall_ms: f64,
}

/// Stream processor that owns its model factors and window state.
#[derive(Debug, Clone)]
pub struct SlidingWindowFilter {
    passer: MessagePasser,
    state: Option<WindowState>,
    config: CgfbConfig,
    variant: WindowVariant,
}

impl SlidingWindowFilter {
    pub fn new(
        params: &GhmmParams,
        window_len: usize,
        variant: WindowVariant,
        config: CgfbConfig,
    ) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::InvalidWindow);
        }
        config.validate()?;
        let passer = MessagePasser::new(params)?;
        let state = Some(init_with(&passer, window_len));
        Ok(Self {
            passer,
            state,
            config,
            variant,
        })
    }

    pub fn state(&self) -> &WindowState {
        self.state
            .as_ref()
            .expect("state is restored after every step")
    }

    pub fn step(&mut self, entry: AggregateEntry) -> Result<StepOutput> {
        let start = Instant::now();
        let state = self
            .state
            .take()
            .expect("state is restored after every step");
        let t = state.current_index;
        let fallback = state.clone();
        match step_with(&self.passer, state, entry, &self.config, self.variant) {
            Ok((state, filtered)) => {
                let out = StepOutput {
                    t,
                    filtered,
                    sweeps: state.last_sweeps,
                    converged: state.last_converged,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                };
                self.state = Some(state);
                Ok(out)
            }
            Err(e) => {
                self.state = Some(fallback);
                Err(e)
            }
        }
    }

    /// Runs the filter over a whole sequence.
    pub fn run<I>(&mut self, entries: I) -> Result<Vec<StepOutput>>
    where
        I: IntoIterator<Item = AggregateEntry>,
    {
        entries.into_iter().map(|e| self.step(e)).collect()
    }
}

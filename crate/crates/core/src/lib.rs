//! Aggregate inference for populations of agents that share one linear-Gaussian
//! hidden Markov model.
//!
//! A population of `M` indistinguishable agents evolves under
//!
//! ```text
//! x_{t+1} = A x_t + w_t,   w_t ~ N(0, Q)
//! o_t     = C x_t + v_t,   v_t ~ N(0, R)
//! x_1     ~ N(pi, Pi)
//! ```
//!
//! and is only observed through per-step Gaussian summaries of the recorded
//! observations. [`cgfb`] passes four families of Gaussian messages
//! (forward, backward, upward, downward) in information form until they reach
//! a fixed point, and returns the estimated population state densities.
//! [`window`] runs the same iteration online over the latest `K` summaries,
//! and [`kalman`] holds the single-agent filter, smoother and brute-force
//! conditioning routines the collective algorithm reduces to.
//!
//! ```
//! use cgfb::{cgfb::{run_cgfb, CgfbConfig}, model::{fit_aggregate, simulate, GhmmParams}};
//!
//! let params = GhmmParams::reference(0.05);
//! let bundle = simulate(&params, 50, 20, 7).unwrap();
//! let agg = fit_aggregate(&bundle).unwrap();
//! let out = run_cgfb(&params, &agg, &CgfbConfig::default()).unwrap();
//! assert!(out.report.converged);
//! assert_eq!(out.marginals.len(), 20);
//! ```

pub mod cgfb;
pub mod error;
pub mod experiment;
pub mod gauss;
pub mod io;
pub mod kalman;
pub mod model;
pub mod plot;
pub mod tolerances;
pub mod window;

pub use error::{Error, Result};

//! Named numerical tolerances shared by every module.

/// Absolute bound on `max |X - X^T|` for matrices treated as symmetric.
pub const TAU_SYM: f64 = 1e-9;

/// Eigenvalues in `[-TAU_PSD, 0)` are rounding noise and get clamped to zero.
pub const TAU_PSD: f64 = 1e-10;

/// Relative residual bound for symmetric positive definite solves.
pub const TAU_SOLVE: f64 = 1e-8;

/// Relative bound for moment/canonical round trips.
pub const TAU_RT: f64 = 1e-10;

/// Relative scale of the diagonal jitter added when a Cholesky factorization fails.
pub const JITTER_SCALE: f64 = 1e-9;

/// Absolute floor for the diagonal jitter.
pub const JITTER_FLOOR: f64 = 1e-12;

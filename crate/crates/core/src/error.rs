use std::fmt;

use crate::cgfb::CgfbOutput;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which message family an update belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Forward,
    Backward,
    Upward,
    Downward,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::Forward => "forward",
            MessageKind::Backward => "backward",
            MessageKind::Upward => "upward",
            MessageKind::Downward => "downward",
        })
    }
}

/// One violated model invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelIssue {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("matrix is not symmetric ({context}): max asymmetry {asymmetry:e}")]
    NotSymmetric { context: String, asymmetry: f64 },

    #[error("dimension mismatch ({context}): expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {}", join_issues(.0))]
    InvalidModel(Vec<ModelIssue>),

    #[error("aggregate covariance at t={t} cannot be repaired to positive definite")]
    DegenerateAggregate { t: usize },

    #[error("{kind} update at t={t}: inner matrix is singular")]
    SingularInnerMatrix { t: usize, kind: MessageKind },

    #[error(
        "upward update at t={t}: R^-1 + P_hat^-1 - Lambda_down is not positive definite \
         (min eigenvalue {min_eigenvalue:e})"
    )]
    IndefiniteDeficit { t: usize, min_eigenvalue: f64 },

    #[error("{kind} message at t={t} has eigenvalue {min_eigenvalue:e} below the PSD floor")]
    IndefiniteMessage {
        t: usize,
        kind: MessageKind,
        min_eigenvalue: f64,
    },

    #[error("marginal precision at t={t} is not positive definite")]
    ImproperMarginal { t: usize },

    #[error("no convergence after {sweeps} sweeps (last residual {residual:e})")]
    MaxItersExceeded {
        sweeps: usize,
        residual: f64,
        best: Box<CgfbOutput>,
    },

    #[error("innovation covariance R + C P C^T is not positive definite")]
    SingularInnovation,

    #[error("joint Gaussian would have dimension {dim}, above the cap of {cap}")]
    DimensionCapExceeded { dim: usize, cap: usize },

    #[error("window length must be at least 1")]
    InvalidWindow,

    #[error("length mismatch ({context}): {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in field `{field}`: {reason}")]
    Parse { field: String, reason: String },

    #[error("at absolute time t={t}: {source}")]
    AtTime {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("seed {seed}, stage {stage}: {source}")]
    Stage {
        seed: u64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_issues(issues: &[ModelIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn not_pd(context: impl Into<String>) -> Self {
        Error::NotPositiveDefinite {
            context: context.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::DegenerateAggregate { .. }
            | Error::SingularInnerMatrix { .. }
            | Error::IndefiniteDeficit { .. }
            | Error::IndefiniteMessage { .. }
            | Error::ImproperMarginal { .. }
            | Error::MaxItersExceeded { .. }
            | Error::SingularInnovation => true,
            Error::AtTime { source, .. } | Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

// The derived form would dump the whole best-effort state carried by
// `MaxItersExceeded`; the message already names everything useful.
impl fmt::Debug for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

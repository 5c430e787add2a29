use crate::manifold::ManifoldKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("manifold kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: ManifoldKind,
        found: ManifoldKind,
    },

    #[error("point is on or near the cut locus (geodesic distance {distance})")]
    CutLocus { distance: f64 },

    #[error("Frechet mean iteration did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("privatized Hessian is not positive definite (smallest eigenvalue {min_eigenvalue:e}); increase mu or n")]
    DegenerateHessian { min_eigenvalue: f64 },

    #[error("Monte Carlo precision insufficient: standard error {achieved:e} exceeds {requested:e}")]
    InsufficientPrecision { achieved: f64, requested: f64 },

    #[error("campaign failed: {failed} of {total} replications failed")]
    CampaignFailed { failed: usize, total: usize },
}

impl Error {
    /// Numerical failures, as opposed to invalid inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::DegenerateHessian { .. }
                | Error::InsufficientPrecision { .. }
                | Error::CampaignFailed { .. }
                | Error::CutLocus { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

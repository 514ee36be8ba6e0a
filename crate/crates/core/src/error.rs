use thiserror::Error;

use crate::transfer::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The target envelope asks for more flux than the resonator can release.
    #[error(
        "infeasible mode: f(t)^2 exceeds kappa*(1-F(t)) at t = {time:.4e} s \
         (asymptotic ratio f^2/(kappa*(1-F)) -> {asymptotic_ratio:.4})"
    )]
    Infeasible { time: f64, asymptotic_ratio: f64 },

    #[error("pulse window captures {captured:.5} of the envelope, at least 0.99 required")]
    Window { captured: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numerical breakdown: {0}")]
    Computation(String),

    #[error("integrator instability at step {step}: excitation norm drifted by {drift:.3e}")]
    Integrator { step: usize, drift: f64 },

    #[error("fit did not converge after {iterations} iterations (best residual {:.4e})", best.residual)]
    Fit {
        iterations: usize,
        best: Box<FitResult>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

//! Error type shared by every module in the crate.

use thiserror::Error;

/// A single `(round, step, energy)` sample kept alongside numerical failures
/// so the caller can see what the optimizer did right before it blew up.
pub type EnergySample = (usize, usize, f64);

#[derive(Debug, Error)]
pub enum Error {
    /// A rotation parameter vector that cannot be normalized.
    #[error("degenerate rotation: |q| = {norm:.3e} is too small to normalize")]
    DegenerateRotation { norm: f64 },

    /// Structural problems in a body or skeleton model (bad references,
    /// non-stochastic regressor rows, inconsistent seams, ...).
    #[error("model error: {0}")]
    Model(String),

    /// Structural problems in a scene file.
    #[error("scene error: {0}")]
    Scene(String),

    /// The synthetic generator could not produce a usable artifact.
    #[error("generation error: {0}")]
    Generation(String),

    /// Metric inputs with mismatched dimensions.
    #[error("metric error: {0}")]
    Metric(String),

    /// Too few confident keypoints to pose the body.
    #[error("underconstrained fit: {confident} confident keypoints, need at least {required}")]
    Underconstrained { confident: usize, required: usize },

    /// An operation that requires a converged fit received a non-converged one.
    #[error("fit did not converge")]
    NotConverged,

    /// NaN or infinity appeared in an objective value or gradient. Carries the
    /// energy trace up to the failing step.
    #[error("numerical failure at round {round}, step {step}: {message}")]
    Numerical {
        message: String,
        round: usize,
        step: usize,
        trace: Vec<EnergySample>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

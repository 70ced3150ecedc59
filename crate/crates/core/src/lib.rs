//! Morris–Lecar benchmark toolkit.
//!
//! Implements the two-variable Morris–Lecar neuron, generates ground-truth
//! trajectories for three excitability regimes (Hopf, SNLC, homoclinic) and
//! trains two learners on them:
//!
//! - a physics-informed network ([`pinn`]) mapping time to `(V, N)`, trained
//!   on a data misfit plus the residual of the model equations;
//! - a neural ODE ([`node`]) whose network is the vector field, trained by
//!   backpropagating through an adaptive Dormand–Prince solve.
//!
//! Everything below the trainers is built in-crate: the integrators
//! ([`integrate`]), a tape-based reverse-mode differentiator with recorded
//! forward tangents ([`autodiff`]), the network and optimizer ([`mlp`]), and
//! the evaluation metrics ([`metrics`]). [`bench`] ties these into data
//! generation, bifurcation sweeps, experiment runs and CSV/SVG reports.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod autodiff;
pub mod bench;
pub mod integrate;
pub mod metrics;
pub mod ml_model;
pub mod mlp;
pub mod node;
pub mod pinn;
mod svg;

use thiserror::Error;

pub use ml_model::{MlParams, Regime, State};

/// Crate-level error; wraps the per-module errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ml_model::ModelError),
    #[error(transparent)]
    Integrate(#[from] integrate::IntegrateError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Mlp(#[from] mlp::MlpError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Scaler(#[from] node::ScalerError),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

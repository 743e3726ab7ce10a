use thiserror::Error;

use crate::ocp::Trajectory;

/// Failures raised by the solvers and checks in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("control component {component} = {value} outside [{lower}, {upper}] beyond clamp tolerance")]
    Admissibility {
        component: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("non-finite evaluation: {0}")]
    NumericalDomain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} did not converge (last residual {residual:e})")]
    Convergence { what: &'static str, residual: f64 },

    #[error("singular KKT Jacobian (smallest singular value {smallest_singular_value:e}); the static minimizer may not be unique")]
    Degeneracy { smallest_singular_value: f64 },

    #[error("state blew up at grid index {index}")]
    BlowUp { index: usize },

    #[error("endpoint violation {violation:e} above tolerance after {outer_iterations} outer iterations")]
    Infeasible {
        violation: f64,
        outer_iterations: usize,
        best: Box<Trajectory>,
    },

    #[error("target not reachable within horizon {tau_max}")]
    Unreachable { tau_max: f64 },

    #[error("no stabilizing initial gain found: {0}")]
    Stabilizability(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("tail not converged: {0}")]
    NotConverged(String),

    #[error("costate integration blew up at grid index {index}")]
    Conditioning { index: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Bundled benchmark problems.
//!
//! | name        | dynamics        | running cost                  |
//! |-------------|-----------------|-------------------------------|
//! | `P1`        | `ẏ = u`         | `(y-1)² + u²`                 |
//! | `P1-offset` | `ẏ = u`         | `(y-1)² + u² + 1`             |
//! | `P2`        | `ẏ = (y₂, u)`   | `(y₁-1)² + y₂² + u²`          |
//! | `P3`        | `ẏ = -y³ + u`   | `(y-0.5)² + u²`               |
//!
//! All use the control box `[-4, 4]`.

use std::sync::Arc;

use nalgebra::{dmatrix, DVector};

use super::{ControlSystem, LinearizationData, ProblemSpec};
use crate::error::{Error, Result};

pub const CONTROL_BOUND: f64 = 4.0;

pub const NAMES: [&str; 4] = ["P1", "P1-offset", "P2", "P3"];

#[derive(Debug, Clone, Copy)]
enum Builtin {
    Integrator { offset: f64 },
    DoubleIntegrator,
    Cubic,
}

impl ControlSystem for Builtin {
    fn dynamics(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Builtin::Integrator { .. } => out[0] = u[0],
            Builtin::DoubleIntegrator => {
                out[0] = y[1];
                out[1] = u[0];
            }
            Builtin::Cubic => out[0] = -y[0] * y[0] * y[0] + u[0],
        }
    }

    fn cost_rate(&self, y: &[f64], u: &[f64]) -> f64 {
        match self {
            Builtin::Integrator { offset } => (y[0] - 1.0).powi(2) + u[0] * u[0] + offset,
            Builtin::DoubleIntegrator => (y[0] - 1.0).powi(2) + y[1] * y[1] + u[0] * u[0],
            Builtin::Cubic => (y[0] - 0.5).powi(2) + u[0] * u[0],
        }
    }

    fn derivatives(&self, y: &[f64], u: &[f64]) -> Option<LinearizationData> {
        Some(match self {
            Builtin::Integrator { .. } => LinearizationData {
                a: dmatrix![0.0],
                b: dmatrix![1.0],
                cost_grad_y: DVector::from_element(1, 2.0 * (y[0] - 1.0)),
                cost_grad_u: DVector::from_element(1, 2.0 * u[0]),
            },
            Builtin::DoubleIntegrator => LinearizationData {
                a: dmatrix![0.0, 1.0; 0.0, 0.0],
                b: dmatrix![0.0; 1.0],
                cost_grad_y: DVector::from_vec(vec![2.0 * (y[0] - 1.0), 2.0 * y[1]]),
                cost_grad_u: DVector::from_element(1, 2.0 * u[0]),
            },
            Builtin::Cubic => LinearizationData {
                a: dmatrix![-3.0 * y[0] * y[0]],
                b: dmatrix![1.0],
                cost_grad_y: DVector::from_element(1, 2.0 * (y[0] - 0.5)),
                cost_grad_u: DVector::from_element(1, 2.0 * u[0]),
            },
        })
    }
}

fn make(name: &str, n: usize, system: Builtin) -> ProblemSpec {
    ProblemSpec::new(
        name,
        n,
        1,
        Arc::new(system),
        DVector::from_element(1, -CONTROL_BOUND),
        DVector::from_element(1, CONTROL_BOUND),
    )
    .expect("builtin problems are well formed")
}

/// Scalar integrator tracking `y = 1`.
pub fn p1() -> ProblemSpec {
    make("P1", 1, Builtin::Integrator { offset: 0.0 })
}

/// `P1` with a unit constant added to the running cost, so `v̄ = 1`.
pub fn p1_offset() -> ProblemSpec {
    make("P1-offset", 1, Builtin::Integrator { offset: 1.0 })
}

/// Double integrator tracking position 1 at rest.
pub fn p2() -> ProblemSpec {
    make("P2", 2, Builtin::DoubleIntegrator)
}

/// Cubic scalar system.
pub fn p3() -> ProblemSpec {
    make("P3", 1, Builtin::Cubic)
}

pub fn by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        "P1" | "p1" => Ok(p1()),
        "P1-offset" | "p1-offset" => Ok(p1_offset()),
        "P2" | "p2" => Ok(p2()),
        "P3" | "p3" => Ok(p3()),
        other => Err(Error::Parse(format!(
            "unknown built-in problem '{other}' (known: {})",
            NAMES.join(", ")
        ))),
    }
}

//! Problem definitions and pointwise evaluations.
//!
//! A [`ProblemSpec`] bundles the dynamics `f(y, u)`, the running cost
//! `f⁰(y, u)` and a box of admissible controls. Every other module reads the
//! problem only through the evaluations defined here.

pub mod builtin;
pub mod expr;
pub mod json;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::static_opt::StaticSolution;

/// Controls outside the box by at most this much are clamped back in.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// The right-hand side and running cost of an autonomous control system.
pub trait ControlSystem: Send + Sync {
    /// Writes `f(y, u)` into `out`.
    fn dynamics(&self, y: &[f64], u: &[f64], out: &mut [f64]);

    fn cost_rate(&self, y: &[f64], u: &[f64]) -> f64;

    /// Analytic first derivatives, when the system can supply them.
    fn derivatives(&self, _y: &[f64], _u: &[f64]) -> Option<LinearizationData> {
        None
    }
}

/// Partial derivatives of `f` and `f⁰` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationData {
    /// `∂f/∂y`, n×n.
    pub a: DMatrix<f64>,
    /// `∂f/∂u`, n×p.
    pub b: DMatrix<f64>,
    pub cost_grad_y: DVector<f64>,
    pub cost_grad_u: DVector<f64>,
}

/// A control problem on `ℝⁿ × Ω` with `Ω` a box.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub control_lower: DVector<f64>,
    pub control_upper: DVector<f64>,
    /// Bound on `‖f‖` over the relevant compact set, if known.
    pub velocity_bound_hint: Option<f64>,
    system: Arc<dyn ControlSystem>,
    reversed: bool,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("control_lower", &self.control_lower.as_slice())
            .field("control_upper", &self.control_upper.as_slice())
            .field("reversed", &self.reversed)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        system: Arc<dyn ControlSystem>,
        control_lower: DVector<f64>,
        control_upper: DVector<f64>,
    ) -> Result<Self> {
        if state_dim == 0 || control_dim == 0 {
            return Err(Error::Dimension(
                "state and control dimensions must be positive".into(),
            ));
        }
        if control_lower.len() != control_dim || control_upper.len() != control_dim {
            return Err(Error::Dimension(format!(
                "control bounds have lengths {}/{} but control_dim is {control_dim}",
                control_lower.len(),
                control_upper.len()
            )));
        }
        for i in 0..control_dim {
            let (lo, hi) = (control_lower[i], control_upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Precondition(format!(
                    "control box component {i} is [{lo}, {hi}]; need finite lower <= upper"
                )));
            }
        }
        Ok(ProblemSpec {
            name: name.into(),
            state_dim,
            control_dim,
            control_lower,
            control_upper,
            velocity_bound_hint: None,
            system,
            reversed: false,
        })
    }

    pub fn with_velocity_bound_hint(mut self, k: f64) -> Self {
        self.velocity_bound_hint = Some(k);
        self
    }

    /// The same problem with dynamics `-f`, used for the backward-in-time
    /// infinite problem. Applying it twice gives back the original dynamics.
    pub fn reversed(&self) -> ProblemSpec {
        let mut out = self.clone();
        out.reversed = !self.reversed;
        out
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// Radius `c` of a ball containing `Ω` (diagnostic only).
    pub fn control_bound_radius(&self) -> f64 {
        self.control_lower
            .iter()
            .chain(self.control_upper.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Raw evaluation of `f` (or `-f` when reversed) with no admissibility check.
    #[inline]
    pub fn dynamics_into(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        self.system.dynamics(y, u, out);
        if self.reversed {
            for v in out.iter_mut() {
                *v = -*v;
            }
        }
    }

    #[inline]
    pub fn cost_rate(&self, y: &[f64], u: &[f64]) -> f64 {
        self.system.cost_rate(y, u)
    }

    /// Analytic derivatives when available, central differences otherwise.
    pub fn derivatives(&self, y: &[f64], u: &[f64]) -> LinearizationData {
        match self.system.derivatives(y, u) {
            Some(mut lin) => {
                if self.reversed {
                    lin.a.neg_mut();
                    lin.b.neg_mut();
                }
                lin
            }
            None => self.derivatives_fd(y, u),
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        let y = vec![0.0; self.state_dim];
        let u = self.clamp_slice(&vec![0.0; self.control_dim]);
        self.system.derivatives(&y, &u).is_some()
    }

    /// Central finite differences, step `max(1e-6, 1e-6·|x_i|)`.
    pub fn derivatives_fd(&self, y: &[f64], u: &[f64]) -> LinearizationData {
        let (n, p) = (self.state_dim, self.control_dim);
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, p);
        let mut gy = DVector::zeros(n);
        let mut gu = DVector::zeros(p);
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];

        let mut yy = y.to_vec();
        for j in 0..n {
            let h = fd_step(y[j]);
            yy[j] = y[j] + h;
            self.dynamics_into(&yy, u, &mut fp);
            let cp = self.cost_rate(&yy, u);
            yy[j] = y[j] - h;
            self.dynamics_into(&yy, u, &mut fm);
            let cm = self.cost_rate(&yy, u);
            yy[j] = y[j];
            for i in 0..n {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
            gy[j] = (cp - cm) / (2.0 * h);
        }
        let mut uu = u.to_vec();
        for j in 0..p {
            let h = fd_step(u[j]);
            uu[j] = u[j] + h;
            self.dynamics_into(y, &uu, &mut fp);
            let cp = self.cost_rate(y, &uu);
            uu[j] = u[j] - h;
            self.dynamics_into(y, &uu, &mut fm);
            let cm = self.cost_rate(y, &uu);
            uu[j] = u[j];
            for i in 0..n {
                b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
            gu[j] = (cp - cm) / (2.0 * h);
        }
        LinearizationData {
            a,
            b,
            cost_grad_y: gy,
            cost_grad_u: gu,
        }
    }

    pub fn clamp_slice(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| v.clamp(self.control_lower[i], self.control_upper[i]))
            .collect()
    }

    pub fn project_control(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.control_lower[i], self.control_upper[i]);
        }
    }

    /// Clamps `u` into `Ω` if it is outside by at most [`CLAMP_TOLERANCE`].
    pub fn admissible_control(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.control_dim {
            return Err(Error::Dimension(format!(
                "control has length {}, expected {}",
                u.len(),
                self.control_dim
            )));
        }
        for (i, &v) in u.iter().enumerate() {
            let (lo, hi) = (self.control_lower[i], self.control_upper[i]);
            if !v.is_finite() || v < lo - CLAMP_TOLERANCE || v > hi + CLAMP_TOLERANCE {
                return Err(Error::Admissibility {
                    component: i,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(self.clamp_slice(u))
    }

    /// Distance of `u` to the boundary of the box (negative outside).
    pub fn interior_margin(&self, u: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.control_lower[i]).min(self.control_upper[i] - v))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_state(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "state has length {}, expected {}",
                y.len(),
                self.state_dim
            )));
        }
        Ok(())
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs())
}

/// `f(y, u)` for an admissible control.
pub fn evaluate_dynamics(spec: &ProblemSpec, y: &[f64], u: &[f64]) -> Result<DVector<f64>> {
    spec.check_state(y)?;
    let u = spec.admissible_control(u)?;
    let mut out = vec![0.0; spec.state_dim];
    spec.dynamics_into(y, &u, &mut out);
    Ok(DVector::from_vec(out))
}

/// `w(y, u) = f⁰(y, u) - f⁰(ȳ, ū)`.
pub fn shifted_cost(
    spec: &ProblemSpec,
    static_sol: &StaticSolution,
    y: &[f64],
    u: &[f64],
) -> Result<f64> {
    spec.check_state(y)?;
    let u = spec.admissible_control(u)?;
    Ok(spec.cost_rate(y, &u) - static_sol.v_bar)
}

/// Jacobians of `f` and gradients of `f⁰` at `(y, u)`.
pub fn linearize(spec: &ProblemSpec, y: &[f64], u: &[f64]) -> Result<LinearizationData> {
    spec.check_state(y)?;
    if u.len() != spec.control_dim {
        return Err(Error::Dimension(format!(
            "control has length {}, expected {}",
            u.len(),
            spec.control_dim
        )));
    }
    let lin = spec.derivatives(y, u);
    let finite = lin.a.iter().all(|v| v.is_finite())
        && lin.b.iter().all(|v| v.is_finite())
        && lin.cost_grad_y.iter().all(|v| v.is_finite())
        && lin.cost_grad_u.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::NumericalDomain(format!(
            "derivatives of '{}' at y={y:?}, u={u:?}",
            spec.name
        )));
    }
    Ok(lin)
}

/// Controllability matrix `[B, AB, …, A^{n-1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = b.ncols();
    let mut out = DMatrix::zeros(n, n * p);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * p), (n, p)).copy_from(&block);
        block = a * &block;
    }
    out
}

/// Numerical rank by singular values above `1e-10·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * smax).count()
}

/// Kalman rank condition for the pair `(A, B)`.
pub fn kalman_rank(lin: &LinearizationData) -> bool {
    numerical_rank(&controllability_matrix(&lin.a, &lin.b)) == lin.a.nrows()
}

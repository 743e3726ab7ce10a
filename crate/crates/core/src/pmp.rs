//! Pontryagin diagnostics on stored trajectories.
//!
//! With `λ⁰ = −1` the Hamiltonian is `H(y, λ, u) = ⟨λ, f(y, u)⟩ − f⁰(y, u)`,
//! the costate follows `λ̇ = −∂H/∂y` and interior optimal controls satisfy
//! `∂H/∂u = 0`. Here the costate is shot forward from a free `λ(0)` along the
//! stored `(y, u)` and `λ(0)` is fitted to make `∂H/∂u` as small as possible
//! in the least-squares sense.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::ocp::Trajectory;

/// Controls closer than this to the boundary of `Ω` are not checked.
pub const INTERIOR_MARGIN: f64 = 1e-6;

const GAUSS_NEWTON_STEPS: usize = 4;

pub fn hamiltonian(spec: &ProblemSpec, y: &[f64], lambda: &[f64], u: &[f64]) -> f64 {
    let mut f = vec![0.0; spec.state_dim];
    spec.dynamics_into(y, u, &mut f);
    lambda.iter().zip(&f).map(|(l, v)| l * v).sum::<f64>() - spec.cost_rate(y, u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalCheck {
    pub costates: Vec<DVector<f64>>,
    /// Largest interval average of `‖∂H/∂u‖` over interior controls.
    pub stationarity_residual: f64,
    /// `max |H − H(first interval)|` over interval midpoints.
    pub hamiltonian_drift: f64,
    pub boundary_active_fraction: f64,
    pub lambda0: DVector<f64>,
}

/// Right-hand side of the joint `(y, λ, q)` system with `q̇ = ∂H/∂u`.
fn joint_rhs(spec: &ProblemSpec, u: &[f64], z: &[f64], out: &mut [f64]) {
    let (n, p) = (spec.state_dim, spec.control_dim);
    let (y, lambda) = (&z[..n], &z[n..2 * n]);
    spec.dynamics_into(y, u, &mut out[..n]);
    let lin = spec.derivatives(y, u);
    for j in 0..n {
        let mut acc = lin.cost_grad_y[j];
        for i in 0..n {
            acc -= lin.a[(i, j)] * lambda[i];
        }
        out[n + j] = acc;
    }
    for j in 0..p {
        let mut acc = -lin.cost_grad_u[j];
        for i in 0..n {
            acc += lin.b[(i, j)] * lambda[i];
        }
        out[2 * n + j] = acc;
    }
}

fn rk4_step(spec: &ProblemSpec, u: &[f64], z: &mut [f64], h: f64) {
    let m = z.len();
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; m]);
    let mut tmp = z.to_vec();
    joint_rhs(spec, u, &tmp, &mut k[0]);
    for (s, c) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
        let (prev, rest) = k.split_at_mut(s);
        for i in 0..m {
            tmp[i] = z[i] + c * h * prev[s - 1][i];
        }
        joint_rhs(spec, u, &tmp, &mut rest[0]);
    }
    for i in 0..m {
        z[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

struct Sweep {
    costates: Vec<DVector<f64>>,
    /// Interval averages of `∂H/∂u` for the interior intervals, stacked.
    residuals: Vec<f64>,
    max_residual: f64,
    midpoint_h: Vec<f64>,
}

fn sweep(spec: &ProblemSpec, traj: &Trajectory, interior: &[bool], lambda0: &[f64]) -> Result<Sweep> {
    let (n, p) = (spec.state_dim, spec.control_dim);
    let mut lambda = lambda0.to_vec();
    let mut costates = vec![DVector::from_column_slice(&lambda)];
    let mut residuals = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut midpoint_h = Vec::with_capacity(traj.intervals());
    let mut z = vec![0.0; 2 * n + p];
    for k in 0..traj.intervals() {
        let h = traj.grid[k + 1] - traj.grid[k];
        let u = traj.controls[k].as_slice();
        z[..n].copy_from_slice(traj.states[k].as_slice());
        z[n..2 * n].copy_from_slice(&lambda);
        z[2 * n..].iter_mut().for_each(|v| *v = 0.0);
        let mut half = z.clone();
        rk4_step(spec, u, &mut half, 0.5 * h);
        midpoint_h.push(hamiltonian(spec, &half[..n], &half[n..2 * n], u));
        rk4_step(spec, u, &mut z, h);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning { index: k + 1 });
        }
        lambda.copy_from_slice(&z[n..2 * n]);
        costates.push(DVector::from_column_slice(&lambda));
        if interior[k] {
            let avg: Vec<f64> = z[2 * n..].iter().map(|q| q / h).collect();
            max_residual = max_residual.max(avg.iter().map(|v| v * v).sum::<f64>().sqrt());
            residuals.extend(avg);
        }
    }
    Ok(Sweep {
        costates,
        residuals,
        max_residual,
        midpoint_h,
    })
}

/// Fits `λ(0)` starting from `lambda0_guess` and reports the residuals.
pub fn check_extremal(spec: &ProblemSpec, traj: &Trajectory, lambda0_guess: &DVector<f64>) -> Result<ExtremalCheck> {
    let n = spec.state_dim;
    if lambda0_guess.len() != n {
        return Err(Error::Dimension(format!(
            "costate guess of length {}, expected {n}",
            lambda0_guess.len()
        )));
    }
    let intervals = traj.intervals();
    let interior: Vec<bool> = traj
        .controls
        .iter()
        .map(|u| spec.interior_margin(u.as_slice()) > INTERIOR_MARGIN)
        .collect();
    let active = interior.iter().filter(|i| !**i).count();

    // The residual is affine in λ(0); Gauss–Newton with a difference
    // Jacobian converges in one step up to rounding.
    let mut lambda0 = lambda0_guess.clone();
    let mut current = sweep(spec, traj, &interior, lambda0.as_slice())?;
    if !current.residuals.is_empty() {
        for _ in 0..GAUSS_NEWTON_STEPS {
            let m = current.residuals.len();
            let mut jac = DMatrix::zeros(m, n);
            for j in 0..n {
                let step = 1e-4 * (1.0 + lambda0[j].abs());
                let mut probe = lambda0.clone();
                probe[j] += step;
                let plus = sweep(spec, traj, &interior, probe.as_slice())?;
                probe[j] -= 2.0 * step;
                let minus = sweep(spec, traj, &interior, probe.as_slice())?;
                for i in 0..m {
                    jac[(i, j)] = (plus.residuals[i] - minus.residuals[i]) / (2.0 * step);
                }
            }
            let rhs = -DVector::from_column_slice(&current.residuals);
            let svd = jac.svd(true, true);
            let cutoff = 1e-12 * svd.singular_values.max();
            let Ok(delta) = svd.solve(&rhs, cutoff) else { break };
            let candidate = &lambda0 + delta;
            let next = sweep(spec, traj, &interior, candidate.as_slice())?;
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            if norm(&next.residuals) >= norm(&current.residuals) {
                break;
            }
            lambda0 = candidate;
            current = next;
        }
    }
    let h0 = current.midpoint_h.first().copied().unwrap_or(0.0);
    let hamiltonian_drift = current
        .midpoint_h
        .iter()
        .map(|h| (h - h0).abs())
        .fold(0.0, f64::max);
    Ok(ExtremalCheck {
        costates: current.costates,
        stationarity_residual: current.max_residual,
        hamiltonian_drift,
        boundary_active_fraction: if intervals == 0 {
            0.0
        } else {
            active as f64 / intervals as f64
        },
        lambda0,
    })
}

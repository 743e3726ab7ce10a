//! The static optimization problem `min f⁰(y, u) s.t. f(y, u) = 0`.
//!
//! Solved by damped Newton iteration on the stacked KKT system
//!
//! ```txt
//! f(y, u)                    = 0
//! -∂f⁰/∂y + (∂f/∂y)ᵀ λ       = 0
//! -∂f⁰/∂u + (∂f/∂u)ᵀ λ       = 0
//! ```
//!
//! with the cost multiplier fixed to `-1` (abnormal multipliers are excluded).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Acceptance threshold on the ∞-norm of the KKT residual.
pub const STATIC_TOLERANCE: f64 = 1e-10;
pub const MAX_NEWTON_ITERATIONS: usize = 100;
const LINE_SEARCH_DAMPING: f64 = 0.5;
const MAX_HALVINGS: usize = 40;
/// Relative singular value below which the KKT Jacobian counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum StaticWarning {
    /// `ū` is on (or outside) the boundary of the control box.
    BoundaryControl { margin: f64 },
    /// Multi-start runs converged to different KKT points.
    NonUnique { max_disagreement: f64 },
}

/// The turnpike `(ȳ, ū)`, its multiplier `λ̄` and the static value `v̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticSolution {
    pub y_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub lambda_bar: DVector<f64>,
    /// `f⁰(ȳ, ū)`.
    pub v_bar: f64,
    pub kkt_residual: f64,
    pub interior_margin: f64,
    /// Smallest singular value of the KKT Jacobian at the solution.
    pub smallest_singular_value: f64,
    pub warnings: Vec<StaticWarning>,
}

impl StaticSolution {
    /// Assembles a candidate at `(y, u, λ)`, filling in the derived fields.
    pub fn from_point(
        spec: &ProblemSpec,
        y: DVector<f64>,
        u: DVector<f64>,
        lambda: DVector<f64>,
    ) -> Self {
        let v_bar = spec.cost_rate(y.as_slice(), u.as_slice());
        let interior_margin = spec.interior_margin(u.as_slice());
        let mut sol = StaticSolution {
            y_bar: y,
            u_bar: u,
            lambda_bar: lambda,
            v_bar,
            kkt_residual: f64::NAN,
            interior_margin,
            smallest_singular_value: f64::NAN,
            warnings: Vec::new(),
        };
        sol.kkt_residual = kkt_residual(spec, &sol);
        if interior_margin <= 0.0 {
            sol.warnings
                .push(StaticWarning::BoundaryControl { margin: interior_margin });
        }
        sol
    }

    fn stacked(&self) -> DVector<f64> {
        stack(&self.y_bar, &self.u_bar, &self.lambda_bar)
    }
}

fn stack(y: &DVector<f64>, u: &DVector<f64>, l: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        y.len() + u.len() + l.len(),
        y.iter().chain(u.iter()).chain(l.iter()).copied(),
    )
}

/// The stacked KKT residual at `z = (y, u, λ)`.
pub fn kkt_system(spec: &ProblemSpec, z: &DVector<f64>) -> DVector<f64> {
    let (n, p) = (spec.state_dim, spec.control_dim);
    let y = &z.as_slice()[..n];
    let u = &z.as_slice()[n..n + p];
    let lambda = z.rows(n + p, n);
    let mut out = DVector::zeros(2 * n + p);
    let mut fv = vec![0.0; n];
    spec.dynamics_into(y, u, &mut fv);
    out.rows_mut(0, n).copy_from_slice(&fv);
    let lin = spec.derivatives(y, u);
    let ry = -&lin.cost_grad_y + lin.a.transpose() * lambda;
    let ru = -&lin.cost_grad_u + lin.b.transpose() * lambda;
    out.rows_mut(n, n).copy_from(&ry);
    out.rows_mut(2 * n, p).copy_from(&ru);
    out
}

/// ∞-norm of the KKT residual at `candidate`.
pub fn kkt_residual(spec: &ProblemSpec, candidate: &StaticSolution) -> f64 {
    kkt_system(spec, &candidate.stacked()).amax()
}

fn kkt_jacobian(spec: &ProblemSpec, z: &DVector<f64>) -> DMatrix<f64> {
    let m = z.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut zz = z.clone();
    for j in 0..m {
        let h = 1e-6_f64.max(1e-6 * z[j].abs());
        zz[j] = z[j] + h;
        let fp = kkt_system(spec, &zz);
        zz[j] = z[j] - h;
        let fm = kkt_system(spec, &zz);
        zz[j] = z[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

fn finite_norm(v: &DVector<f64>) -> f64 {
    let n = v.norm();
    if n.is_finite() {
        n
    } else {
        f64::INFINITY
    }
}

/// Newton iteration from `(y0, u0, λ0)` with backtracking on `‖KKT‖₂`.
pub fn solve_static(
    spec: &ProblemSpec,
    y0: &DVector<f64>,
    u0: &DVector<f64>,
    lambda0: &DVector<f64>,
) -> Result<StaticSolution> {
    let (n, p) = (spec.state_dim, spec.control_dim);
    if y0.len() != n || u0.len() != p || lambda0.len() != n {
        return Err(Error::Dimension("initial guess dimensions".into()));
    }
    let mut z = stack(y0, u0, lambda0);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("initial guess must be finite".into()));
    }
    let mut f = kkt_system(spec, &z);
    let mut norm = finite_norm(&f);
    if !norm.is_finite() {
        return Err(Error::NumericalDomain("KKT residual at initial guess".into()));
    }
    let mut smallest_sv = f64::NAN;
    let mut iterations = 0;
    // Iterate past the acceptance threshold while Newton still makes progress,
    // so downstream quantities see a residual near rounding level.
    while iterations < MAX_NEWTON_ITERATIONS {
        if f.amax() <= 1e-3 * STATIC_TOLERANCE {
            break;
        }
        iterations += 1;
        let jac = kkt_jacobian(spec, &z);
        let sv = jac.clone().svd(false, false).singular_values;
        let smax = sv.max();
        smallest_sv = sv.min();
        if !(smax > 0.0) || smallest_sv <= SINGULAR_RTOL * smax {
            return Err(Error::Degeneracy {
                smallest_singular_value: smallest_sv,
            });
        }
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or(Error::Degeneracy {
                smallest_singular_value: smallest_sv,
            })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &z + alpha * &step;
            let ft = kkt_system(spec, &trial);
            let nt = finite_norm(&ft);
            if nt <= (1.0 - 1e-4 * alpha) * norm {
                z = trial;
                f = ft;
                norm = nt;
                accepted = true;
                break;
            }
            alpha *= LINE_SEARCH_DAMPING;
        }
        if !accepted {
            break;
        }
    }
    let residual = f.amax();
    if !(residual <= STATIC_TOLERANCE) {
        return Err(Error::Convergence {
            what: "static Newton iteration",
            residual,
        });
    }
    let y = z.rows(0, n).into_owned();
    let u = z.rows(n, p).into_owned();
    let l = z.rows(n + p, n).into_owned();
    let mut sol = StaticSolution::from_point(spec, y, u, l);
    if smallest_sv.is_nan() {
        smallest_sv = kkt_jacobian(spec, &z)
            .svd(false, false)
            .singular_values
            .min();
    }
    sol.smallest_singular_value = smallest_sv;
    Ok(sol)
}

/// Multi-start configuration for the uniqueness check.
#[derive(Debug, Clone)]
pub struct MultiStart {
    pub starts: usize,
    pub seed: u64,
    /// Half-width of the state box `[-w, w]ⁿ` the starting states are drawn from.
    pub state_box: f64,
    /// Two solutions closer than this count as the same KKT point.
    pub agreement_tolerance: f64,
}

impl Default for MultiStart {
    fn default() -> Self {
        MultiStart {
            starts: 8,
            seed: 0,
            state_box: 5.0,
            agreement_tolerance: 1e-6,
        }
    }
}

impl MultiStart {
    pub fn with_seed(seed: u64) -> Self {
        MultiStart {
            seed,
            ..Default::default()
        }
    }

    /// The seeded starting points: states uniform in the state box, controls
    /// uniform in `Ω`, multipliers zero.
    pub fn draws(&self, spec: &ProblemSpec) -> Vec<(DVector<f64>, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.starts)
            .map(|_| {
                let y = DVector::from_fn(spec.state_dim, |_, _| {
                    rng.gen_range(-self.state_box..=self.state_box)
                });
                let u = DVector::from_fn(spec.control_dim, |i, _| {
                    let (lo, hi) = (spec.control_lower[i], spec.control_upper[i]);
                    if lo == hi {
                        lo
                    } else {
                        rng.gen_range(lo..=hi)
                    }
                });
                (y, u)
            })
            .collect()
    }
}

/// Runs Newton from every multi-start draw and merges the results by lowest
/// `v̄`, then lowest residual. Disagreeing converged runs add a
/// [`StaticWarning::NonUnique`].
pub fn solve_static_multistart(spec: &ProblemSpec, opts: &MultiStart) -> Result<StaticSolution> {
    let zero = DVector::zeros(spec.state_dim);
    let outcomes: Vec<Result<StaticSolution>> = opts
        .draws(spec)
        .par_iter()
        .map(|(y, u)| solve_static(spec, y, u, &zero))
        .collect();
    let mut solved = Vec::new();
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(s) => solved.push(s),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if solved.is_empty() {
        return Err(first_error.unwrap_or(Error::Precondition("no multi-start draws".into())));
    }
    solved.sort_by(|a, b| {
        a.v_bar
            .total_cmp(&b.v_bar)
            .then(a.kkt_residual.total_cmp(&b.kkt_residual))
    });
    let mut best = solved[0].clone();
    let best_z = best.stacked();
    let max_disagreement = solved
        .iter()
        .map(|s| (s.stacked() - &best_z).amax())
        .fold(0.0, f64::max);
    if max_disagreement > opts.agreement_tolerance {
        best.warnings
            .push(StaticWarning::NonUnique { max_disagreement });
    }
    Ok(best)
}

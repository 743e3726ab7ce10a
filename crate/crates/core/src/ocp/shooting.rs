//! Classical RK4 over piecewise-constant controls, with the running cost
//! carried as extra quadrature states and an exact discrete adjoint.

use crate::model::ProblemSpec;

/// RK4 weights of the four stages.
const WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// States and accumulated costs of one forward sweep.
#[derive(Debug, Clone)]
pub(crate) struct Rollout {
    /// `(N+1)·n` values, row per grid point.
    pub states: Vec<f64>,
    /// Per-step increments of `∫w`.
    pub shifted_increments: Vec<f64>,
    pub shifted: f64,
    pub raw: f64,
}

impl Rollout {
    pub fn state(&self, k: usize, n: usize) -> &[f64] {
        &self.states[k * n..(k + 1) * n]
    }

    pub fn terminal(&self, n: usize) -> &[f64] {
        let m = self.states.len() / n;
        self.state(m - 1, n)
    }
}

struct Stages {
    points: [Vec<f64>; 4],
    slopes: [Vec<f64>; 4],
}

impl Stages {
    fn new(n: usize) -> Self {
        Stages {
            points: std::array::from_fn(|_| vec![0.0; n]),
            slopes: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    /// Fills stage points and slopes for one step from `y` with control `u`.
    fn compute(&mut self, spec: &ProblemSpec, y: &[f64], u: &[f64], h: f64) {
        let offsets = [0.0, 0.5 * h, 0.5 * h, h];
        for s in 0..4 {
            if s == 0 {
                self.points[0].copy_from_slice(y);
            } else {
                for i in 0..y.len() {
                    self.points[s][i] = y[i] + offsets[s] * self.slopes[s - 1][i];
                }
            }
            spec.dynamics_into(&self.points[s], u, &mut self.slopes[s]);
        }
    }
}

/// Integrates from `x0` with `controls` (row per step, `p` wide) over the
/// step lengths `steps`. Fails with the first grid index whose state is not
/// finite.
pub(crate) fn rollout(
    spec: &ProblemSpec,
    x0: &[f64],
    controls: &[f64],
    steps: &[f64],
    v_bar: f64,
) -> Result<Rollout, usize> {
    let (n, p) = (spec.state_dim, spec.control_dim);
    let big_n = steps.len();
    debug_assert_eq!(controls.len(), big_n * p);
    let mut states = vec![0.0; (big_n + 1) * n];
    states[..n].copy_from_slice(x0);
    let mut stages = Stages::new(n);
    let mut increments = Vec::with_capacity(big_n);
    let (mut shifted, mut raw) = (0.0, 0.0);
    for k in 0..big_n {
        let h = steps[k];
        let u = &controls[k * p..(k + 1) * p];
        let (done, rest) = states.split_at_mut((k + 1) * n);
        let y = &done[k * n..];
        stages.compute(spec, y, u, h);
        let (mut raw_inc, mut shifted_inc) = (0.0, 0.0);
        for s in 0..4 {
            let c = spec.cost_rate(&stages.points[s], u);
            raw_inc += WEIGHTS[s] * c;
            shifted_inc += WEIGHTS[s] * (c - v_bar);
        }
        let next = &mut rest[..n];
        let mut finite = true;
        for i in 0..n {
            let mut acc = 0.0;
            for s in 0..4 {
                acc += WEIGHTS[s] * stages.slopes[s][i];
            }
            next[i] = y[i] + h * acc;
            finite &= next[i].is_finite();
        }
        let (shifted_step, raw_step) = (h * shifted_inc, h * raw_inc);
        if !finite || !shifted_step.is_finite() {
            return Err(k + 1);
        }
        increments.push(shifted_step);
        shifted += shifted_step;
        raw += raw_step;
    }
    Ok(Rollout {
        states,
        shifted_increments: increments,
        shifted,
        raw,
    })
}

/// Gradient of `cost_weight·∫w + φ(y_N)` with respect to every control,
/// given `terminal_adjoint = ∇φ(y_N)`.
pub(crate) fn adjoint_gradient(
    spec: &ProblemSpec,
    roll: &Rollout,
    controls: &[f64],
    steps: &[f64],
    cost_weight: f64,
    terminal_adjoint: &[f64],
) -> Vec<f64> {
    let (n, p) = (spec.state_dim, spec.control_dim);
    let big_n = steps.len();
    let mut grad = vec![0.0; big_n * p];
    let mut ybar = terminal_adjoint.to_vec();
    let mut stages = Stages::new(n);
    let mut kbar: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut xbar = vec![0.0; n];
    let mut pbar = vec![0.0; n];
    for k in (0..big_n).rev() {
        let h = steps[k];
        let u = &controls[k * p..(k + 1) * p];
        let y = roll.state(k, n);
        stages.compute(spec, y, u, h);
        for s in 0..4 {
            for i in 0..n {
                kbar[s][i] = h * WEIGHTS[s] * ybar[i];
            }
        }
        xbar.copy_from_slice(&ybar);
        let ubar = &mut grad[k * p..(k + 1) * p];
        // Stage s was evaluated at y + offset·k_{s-1}; walk the stages backwards.
        let feed = [0.0, 0.5 * h, 0.5 * h, h];
        for s in (0..4).rev() {
            let lin = spec.derivatives(&stages.points[s], u);
            let cbar = h * WEIGHTS[s] * cost_weight;
            for j in 0..n {
                let mut acc = cbar * lin.cost_grad_y[j];
                for i in 0..n {
                    acc += lin.a[(i, j)] * kbar[s][i];
                }
                pbar[j] = acc;
            }
            for j in 0..p {
                let mut acc = cbar * lin.cost_grad_u[j];
                for i in 0..n {
                    acc += lin.b[(i, j)] * kbar[s][i];
                }
                ubar[j] += acc;
            }
            for j in 0..n {
                xbar[j] += pbar[j];
            }
            if s > 0 {
                for j in 0..n {
                    kbar[s - 1][j] += feed[s] * pbar[j];
                }
            }
        }
        ybar.copy_from_slice(&xbar);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    fn objective(
        spec: &ProblemSpec,
        x0: &[f64],
        controls: &[f64],
        steps: &[f64],
        target: &[f64],
    ) -> f64 {
        let r = rollout(spec, x0, controls, steps, 0.1).unwrap();
        let n = spec.state_dim;
        let yn = r.terminal(n);
        let pen: f64 = yn.iter().zip(target).map(|(a, b)| 0.5 * 3.0 * (a - b).powi(2)).sum();
        0.7 * r.shifted + pen
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        for spec in [builtin::p2(), builtin::p3(), builtin::p3().reversed()] {
            let n = spec.state_dim;
            let x0: Vec<f64> = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
            let target: Vec<f64> = (0..n).map(|i| 0.5 + 0.1 * i as f64).collect();
            let steps = vec![0.1, 0.07, 0.12, 0.1, 0.05, 0.1];
            let controls: Vec<f64> = (0..steps.len()).map(|k| (k as f64 * 0.7).sin()).collect();
            let r = rollout(&spec, &x0, &controls, &steps, 0.1).unwrap();
            let yn = r.terminal(n);
            let tadj: Vec<f64> = yn.iter().zip(&target).map(|(a, b)| 3.0 * (a - b)).collect();
            let g = adjoint_gradient(&spec, &r, &controls, &steps, 0.7, &tadj);
            for k in 0..controls.len() {
                let mut cp = controls.clone();
                let h = 1e-6;
                cp[k] += h;
                let fp = objective(&spec, &x0, &cp, &steps, &target);
                cp[k] -= 2.0 * h;
                let fm = objective(&spec, &x0, &cp, &steps, &target);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn raw_and_shifted_costs_differ_by_horizon_times_offset() {
        let spec = builtin::p3();
        let steps = vec![0.05; 40];
        let controls = vec![0.3; 40];
        let r = rollout(&spec, &[1.2], &controls, &steps, 0.25).unwrap();
        assert!((r.raw - r.shifted - 2.0 * 0.25).abs() < 1e-13);
        let sum: f64 = r.shifted_increments.iter().sum();
        assert!((sum - r.shifted).abs() < 1e-14);
    }

    #[test]
    fn blow_up_reports_first_bad_index() {
        // Backward cubic dynamics ẏ = y³ - u escape in finite time.
        let spec = builtin::p3().reversed();
        let steps = vec![0.1; 50];
        let controls = vec![-4.0; 50];
        let idx = rollout(&spec, &[3.0], &controls, &steps, 0.0).unwrap_err();
        assert!(idx >= 1 && idx <= 50);
    }
}

//! Finite-horizon two-point problems by single-shooting transcription.
//!
//! Controls are piecewise constant on a uniform grid, states are propagated
//! with classical RK4 and the running cost is integrated alongside the
//! state. The terminal condition `y(T) = z` is enforced by an augmented
//! Lagrangian loop around a projected L-BFGS inner solver whose gradients
//! come from the exact discrete adjoint of the integrator.

mod lbfgs;
mod min_time;
pub(crate) mod shooting;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::static_opt::StaticSolution;

pub use min_time::{min_time_steer, MIN_TIME_HORIZON_MAX, MIN_TIME_RESOLUTION};

/// A discretized state/control pair on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// One control per interval; `controls[k]` acts on `[grid[k], grid[k+1])`.
    pub controls: Vec<DVector<f64>>,
    pub shifted_cost_total: f64,
    pub raw_cost_total: f64,
    pub endpoint_violation: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.grid.last().copied().unwrap_or(0.0)
    }

    pub fn intervals(&self) -> usize {
        self.controls.len()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.grid.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("a trajectory has at least one state")
    }

    /// Index of the interval containing `t`, clamped to the grid.
    pub fn interval_at(&self, t: f64) -> usize {
        let n = self.intervals();
        if n == 0 {
            return 0;
        }
        let k = self.grid.partition_point(|&g| g <= t);
        k.saturating_sub(1).min(n - 1)
    }

    /// Continues the trajectory at rest on the turnpike until `horizon`,
    /// keeping the step of the last interval. Costs are unchanged since
    /// `w(ȳ, ū) = 0`.
    pub fn extended_at_rest(&self, horizon: f64, turnpike: &StaticSolution) -> Trajectory {
        let mut out = self.clone();
        let h = self.steps().last().copied().unwrap_or(0.05);
        while out.horizon() < horizon - 1e-9 * horizon.max(1.0) {
            let t = out.horizon() + h;
            out.grid.push(t);
            out.states.push(turnpike.y_bar.clone());
            out.controls.push(turnpike.u_bar.clone());
        }
        out
    }

    /// The same path traversed backwards, `s ↦ y(T − s)`, which is a
    /// trajectory of the negated dynamics. Cost totals carry over unchanged.
    pub fn time_reversed(&self) -> Trajectory {
        let horizon = self.horizon();
        Trajectory {
            grid: self.grid.iter().rev().map(|t| horizon - t).collect(),
            states: self.states.iter().rev().cloned().collect(),
            controls: self.controls.iter().rev().cloned().collect(),
            endpoint_violation: 0.0,
            ..self.clone()
        }
    }

    fn from_rollout(
        spec: &ProblemSpec,
        roll: &shooting::Rollout,
        controls: &[f64],
        steps: &[f64],
        z: Option<&[f64]>,
    ) -> Trajectory {
        let (n, p) = (spec.state_dim, spec.control_dim);
        let mut grid = Vec::with_capacity(steps.len() + 1);
        let mut t = 0.0;
        grid.push(t);
        for h in steps {
            t += h;
            grid.push(t);
        }
        let states: Vec<DVector<f64>> = roll
            .states
            .chunks(n)
            .map(DVector::from_column_slice)
            .collect();
        let endpoint_violation = match z {
            Some(z) => distance(roll.terminal(n), z),
            None => 0.0,
        };
        Trajectory {
            grid,
            states,
            controls: controls.chunks(p).map(DVector::from_column_slice).collect(),
            shifted_cost_total: roll.shifted,
            raw_cost_total: roll.raw,
            endpoint_violation,
        }
    }
}

/// Transcription and outer-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub intervals_per_unit_time: usize,
    /// Inner stationarity tolerance on `∂L/∂u` per unit time.
    pub nlp_tolerance: f64,
    pub endpoint_tolerance: f64,
    pub max_outer_iterations: usize,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_inner_iterations: usize,
    pub lbfgs_memory: usize,
    /// Exact interval count, overriding `intervals_per_unit_time`.
    pub fixed_intervals: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            intervals_per_unit_time: 20,
            nlp_tolerance: 1e-8,
            endpoint_tolerance: 1e-6,
            max_outer_iterations: 50,
            penalty_growth: 10.0,
            initial_penalty: 10.0,
            max_inner_iterations: 3000,
            lbfgs_memory: 12,
            fixed_intervals: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("intervals_per_unit_time", self.intervals_per_unit_time as f64),
            ("nlp_tolerance", self.nlp_tolerance),
            ("endpoint_tolerance", self.endpoint_tolerance),
            ("max_outer_iterations", self.max_outer_iterations as f64),
            ("penalty_growth", self.penalty_growth),
            ("initial_penalty", self.initial_penalty),
            ("max_inner_iterations", self.max_inner_iterations as f64),
            ("lbfgs_memory", self.lbfgs_memory as f64),
            ("fixed_intervals", self.fixed_intervals.unwrap_or(1) as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Precondition(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Number of uniform intervals used on a horizon of length `horizon`.
    pub fn intervals_for(&self, horizon: f64) -> usize {
        if let Some(n) = self.fixed_intervals {
            return n;
        }
        ((self.intervals_per_unit_time as f64 * horizon - 1e-9).ceil() as usize).max(1)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_state(spec: &ProblemSpec, v: &DVector<f64>, what: &str) -> Result<()> {
    if v.len() != spec.state_dim {
        return Err(Error::Dimension(format!(
            "{what} has length {}, expected {}",
            v.len(),
            spec.state_dim
        )));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::NumericalDomain(format!("{what} is not finite")));
    }
    Ok(())
}

/// Propagates `x` along `grid` with one control per interval.
pub fn integrate(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    controls: &[DVector<f64>],
    grid: &[f64],
) -> Result<Vec<DVector<f64>>> {
    check_state(spec, x, "initial state")?;
    if grid.len() != controls.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} controls for a grid of {} points",
            controls.len(),
            grid.len()
        )));
    }
    let steps: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&h0) = steps.first() {
        if steps.iter().any(|&h| !(h > 0.0) || (h - h0).abs() > 1e-9 * h0.max(1.0)) {
            return Err(Error::Precondition("grid must be uniform and increasing".into()));
        }
    }
    let mut flat = Vec::with_capacity(controls.len() * spec.control_dim);
    for u in controls {
        flat.extend(spec.admissible_control(u.as_slice())?);
    }
    let roll = shooting::rollout(spec, x.as_slice(), &flat, &steps, 0.0)
        .map_err(|index| Error::BlowUp { index })?;
    Ok(roll
        .states
        .chunks(spec.state_dim)
        .map(DVector::from_column_slice)
        .collect())
}

/// Solves the shifted two-point problem on `[0, T]` from `x` to `z`.
pub fn solve_finite_horizon(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    horizon: f64,
    x: &DVector<f64>,
    z: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Trajectory> {
    solve_finite_horizon_from(spec, turnpike, horizon, x, z, config, None)
}

/// As [`solve_finite_horizon`], starting the controls from `warm` (resampled
/// onto the new grid, with `ū` past its horizon).
pub fn solve_finite_horizon_from(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    horizon: f64,
    x: &DVector<f64>,
    z: &DVector<f64>,
    config: &SolverConfig,
    warm: Option<&Trajectory>,
) -> Result<Trajectory> {
    config.validate()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    check_state(spec, x, "initial state")?;
    check_state(spec, z, "terminal state")?;
    let (n, p) = (spec.state_dim, spec.control_dim);
    let intervals = config.intervals_for(horizon);
    let h = horizon / intervals as f64;
    let steps = vec![h; intervals];

    let rest = spec.clamp_slice(turnpike.u_bar.as_slice());
    let mut controls = Vec::with_capacity(intervals * p);
    for k in 0..intervals {
        let t = (k as f64 + 0.5) * h;
        match warm {
            Some(w) if w.intervals() > 0 && t < w.horizon() => {
                controls.extend(spec.clamp_slice(w.controls[w.interval_at(t)].as_slice()))
            }
            _ => controls.extend_from_slice(&rest),
        }
    }
    let lower: Vec<f64> = (0..intervals).flat_map(|_| spec.control_lower.iter().copied()).collect();
    let upper: Vec<f64> = (0..intervals).flat_map(|_| spec.control_upper.iter().copied()).collect();

    let xs = x.as_slice();
    let zs = z.as_slice();
    let v_bar = turnpike.v_bar;
    let evaluate = |u: &[f64]| shooting::rollout(spec, xs, u, &steps, v_bar);
    if let Err(index) = evaluate(&controls) {
        // Unstable open loop: start from a closed loop stabilized around the
        // turnpike instead.
        controls = feedback_guess(spec, turnpike, xs, &steps).ok_or(Error::BlowUp { index })?;
        evaluate(&controls).map_err(|index| Error::BlowUp { index })?;
    }

    let opts = lbfgs::Options {
        memory: config.lbfgs_memory,
        max_iterations: config.max_inner_iterations,
        gradient_tolerance: config.nlp_tolerance,
        gradient_scale: 1.0 / h,
        objective_target: None,
    };
    let violation_target = 1e-3 * config.endpoint_tolerance;
    let mut mu = vec![0.0; n];
    let mut rho = config.initial_penalty;
    let mut previous = f64::INFINITY;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut outer = 0;
    while outer < config.max_outer_iterations {
        outer += 1;
        let outcome = lbfgs::minimize(&controls, &lower, &upper, &opts, |u| {
            let roll = evaluate(u).ok()?;
            let c: Vec<f64> = roll.terminal(n).iter().zip(zs).map(|(a, b)| a - b).collect();
            let mut f = roll.shifted;
            let mut adj = vec![0.0; n];
            for i in 0..n {
                f += mu[i] * c[i] + 0.5 * rho * c[i] * c[i];
                adj[i] = mu[i] + rho * c[i];
            }
            let g = shooting::adjoint_gradient(spec, &roll, u, &steps, 1.0, &adj);
            f.is_finite().then_some((f, g))
        });
        let Some(outcome) = outcome else { break };
        controls = outcome.x;
        let roll = evaluate(&controls).map_err(|index| Error::BlowUp { index })?;
        let c: Vec<f64> = roll.terminal(n).iter().zip(zs).map(|(a, b)| a - b).collect();
        let violation = distance(roll.terminal(n), zs);
        if best.as_ref().map_or(true, |(v, _)| violation < *v) {
            best = Some((violation, controls.clone()));
        }
        if violation <= violation_target {
            break;
        }
        for i in 0..n {
            mu[i] += rho * c[i];
        }
        if violation > 0.25 * previous {
            rho *= config.penalty_growth;
        }
        previous = violation;
    }

    let (violation, controls) = best.ok_or(Error::BlowUp { index: 0 })?;
    let roll = evaluate(&controls).map_err(|index| Error::BlowUp { index })?;
    let traj = Trajectory::from_rollout(spec, &roll, &controls, &steps, Some(zs));
    if violation > config.endpoint_tolerance {
        return Err(Error::Infeasible {
            violation,
            outer_iterations: outer,
            best: Box::new(traj),
        });
    }
    Ok(traj)
}

/// Controls of `u = clamp(ū − cK(y − ȳ))` along its own closed loop, with `K`
/// stabilizing the linearization at the turnpike. The gain multiplier `c`
/// doubles until the loop stays finite, as long as `c‖K‖h` stays below one.
fn feedback_guess(spec: &ProblemSpec, turnpike: &StaticSolution, x: &[f64], steps: &[f64]) -> Option<Vec<f64>> {
    let lin = spec.derivatives(turnpike.y_bar.as_slice(), turnpike.u_bar.as_slice());
    let gain = crate::lq::stabilizing_gain(&lin.a, &lin.b).ok()?;
    let h_max = steps.iter().copied().fold(0.0, f64::max);
    let norm = gain.norm().max(f64::MIN_POSITIVE);
    let mut scale = 1.0;
    loop {
        if let Some(controls) = closed_loop(spec, turnpike, &(scale * &gain), x, steps) {
            return Some(controls);
        }
        scale *= 2.0;
        if scale * norm * h_max >= 1.0 {
            return None;
        }
    }
}

fn closed_loop(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    gain: &DMatrix<f64>,
    x: &[f64],
    steps: &[f64],
) -> Option<Vec<f64>> {
    let n = spec.state_dim;
    let mut y = DVector::from_column_slice(x);
    let mut controls = Vec::with_capacity(steps.len() * spec.control_dim);
    for &h in steps {
        let mut u = &turnpike.u_bar - gain * (&y - &turnpike.y_bar);
        spec.project_control(u.as_mut_slice());
        let roll = shooting::rollout(spec, y.as_slice(), u.as_slice(), &[h], 0.0).ok()?;
        y = DVector::from_column_slice(roll.terminal(n));
        controls.extend(u.iter().copied());
    }
    Some(controls)
}

/// `v(T, x, z)`: the unshifted optimal cost.
pub fn value(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    horizon: f64,
    x: &DVector<f64>,
    z: &DVector<f64>,
    config: &SolverConfig,
) -> Result<f64> {
    Ok(solve_finite_horizon(spec, turnpike, horizon, x, z, config)?.raw_cost_total)
}

/// Trapezoidal `∫w` over a trajectory, independent of the RK4 quadrature.
pub fn trapezoid_shifted_cost(spec: &ProblemSpec, turnpike: &StaticSolution, traj: &Trajectory) -> f64 {
    let mut total = 0.0;
    for k in 0..traj.intervals() {
        let h = traj.grid[k + 1] - traj.grid[k];
        let u = traj.controls[k].as_slice();
        let a = spec.cost_rate(traj.states[k].as_slice(), u) - turnpike.v_bar;
        let b = spec.cost_rate(traj.states[k + 1].as_slice(), u) - turnpike.v_bar;
        total += 0.5 * h * (a + b);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use crate::static_opt::solve_static_multistart;
    use crate::static_opt::MultiStart;
    use nalgebra::dvector;

    fn turnpike(spec: &ProblemSpec) -> StaticSolution {
        solve_static_multistart(spec, &MultiStart::default()).unwrap()
    }

    #[test]
    fn integrate_examples() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let y = integrate(&builtin::p1(), &dvector![0.0], &vec![dvector![1.0]; 10], &grid).unwrap();
        assert!((y[10][0] - 1.0).abs() < 1e-14);

        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let y = integrate(&builtin::p2(), &dvector![0.0, 0.0], &vec![dvector![0.0]; 20], &grid).unwrap();
        assert_eq!(y[20], dvector![0.0, 0.0]);

        let y = integrate(&builtin::p3(), &dvector![1.0], &vec![dvector![1.0]; 20], &grid).unwrap();
        assert!(y.iter().all(|s| s[0] == 1.0));
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let spec = builtin::p1();
        let grid = [0.0, 0.1, 0.3];
        assert!(integrate(&spec, &dvector![0.0], &[dvector![0.0], dvector![0.0]], &grid).is_err());
        assert!(integrate(&spec, &dvector![0.0], &[dvector![0.0]], &grid).is_err());
        let grid = [0.0, 0.1];
        assert!(integrate(&spec, &dvector![0.0], &[dvector![7.0]], &grid).is_err());
    }

    #[test]
    fn resting_on_the_turnpike_costs_nothing() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let traj = solve_finite_horizon(&spec, &st, 3.0, &dvector![1.0], &dvector![1.0], &SolverConfig::default())
            .unwrap();
        assert_eq!(traj.states[0], dvector![1.0]);
        assert!(traj.shifted_cost_total.abs() < 1e-12);
        assert!(traj.controls.iter().all(|u| u[0].abs() < 1e-9));
    }

    #[test]
    fn p1_value_with_offset_counts_the_static_cost() {
        let spec = builtin::p1_offset();
        let st = turnpike(&spec);
        let v = value(&spec, &st, 10.0, &dvector![1.0], &dvector![1.0], &SolverConfig::default()).unwrap();
        assert!((v - 10.0).abs() < 1e-9);
    }

    #[test]
    fn p1_two_point_cost_matches_closed_form() {
        // The optimal deviation is e(t) = -sinh(T-t)/sinh(T), whose cost is coth(T).
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let cfg = SolverConfig::default();
        let traj = solve_finite_horizon(&spec, &st, 10.0, &dvector![0.0], &dvector![1.0], &cfg).unwrap();
        let exact = 1.0 / 10f64.tanh();
        assert!(traj.endpoint_violation <= cfg.endpoint_tolerance);
        assert!((traj.shifted_cost_total - exact).abs() < 5e-3, "{}", traj.shifted_cost_total);
        assert!(traj.shifted_cost_total >= 1.0 - 1e-6 && traj.shifted_cost_total <= 1.05);
    }

    #[test]
    fn warm_start_reaches_the_same_cost() {
        let spec = builtin::p3();
        let st = turnpike(&spec);
        let cfg = SolverConfig::default();
        let (x, z) = (dvector![1.5], dvector![0.0]);
        let cold = solve_finite_horizon(&spec, &st, 4.0, &x, &z, &cfg).unwrap();
        let warm = solve_finite_horizon_from(&spec, &st, 5.0, &x, &z, &cfg, Some(&cold)).unwrap();
        let direct = solve_finite_horizon(&spec, &st, 5.0, &x, &z, &cfg).unwrap();
        assert!((warm.shifted_cost_total - direct.shifted_cost_total).abs() < 1e-7);
    }

    #[test]
    fn unreachable_endpoint_is_reported_with_best_iterate() {
        // With |u| ≤ 4 the integrator cannot travel 10 units in one time unit.
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let cfg = SolverConfig { max_outer_iterations: 6, ..SolverConfig::default() };
        match solve_finite_horizon(&spec, &st, 1.0, &dvector![0.0], &dvector![10.0], &cfg) {
            Err(Error::Infeasible { violation, best, .. }) => {
                assert!((violation - 6.0).abs() < 1e-3);
                assert!(best.controls.iter().all(|u| u[0] <= 4.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extension_rests_on_the_turnpike() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let traj = solve_finite_horizon(&spec, &st, 2.0, &dvector![0.0], &dvector![1.0], &SolverConfig::default())
            .unwrap();
        let ext = traj.extended_at_rest(3.0, &st);
        assert!((ext.horizon() - 3.0).abs() < 1e-9);
        assert_eq!(ext.states.len(), ext.controls.len() + 1);
        assert_eq!(ext.interval_at(2.5), 50);
    }
}

use nalgebra::DVector;

use super::{check_state, distance, lbfgs, shooting, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Longest horizon tried before a target is declared unreachable.
pub const MIN_TIME_HORIZON_MAX: f64 = 50.0;

/// Final bisection bracket width.
pub const MIN_TIME_RESOLUTION: f64 = 1e-3;

const MIN_INTERVALS: usize = 10;

/// Drives `‖y(τ) − to‖²` to zero on a fixed horizon. Returns the best
/// trajectory found, feasible or not.
fn feasibility(
    spec: &ProblemSpec,
    from: &[f64],
    to: &[f64],
    tau: f64,
    config: &SolverConfig,
    guess: Option<&Trajectory>,
) -> Option<Trajectory> {
    let p = spec.control_dim;
    let intervals = config.intervals_for(tau).max(MIN_INTERVALS);
    let h = tau / intervals as f64;
    let steps = vec![h; intervals];
    let centre = spec.clamp_slice(&vec![0.0; p]);
    let mut controls = Vec::with_capacity(intervals * p);
    for k in 0..intervals {
        match guess {
            // Resample the previous steering on normalized time.
            Some(g) if g.intervals() > 0 => {
                let s = (k as f64 + 0.5) / intervals as f64 * g.horizon();
                controls.extend(g.controls[g.interval_at(s)].iter().copied());
            }
            _ => controls.extend_from_slice(&centre),
        }
    }
    let lower: Vec<f64> = (0..intervals).flat_map(|_| spec.control_lower.iter().copied()).collect();
    let upper: Vec<f64> = (0..intervals).flat_map(|_| spec.control_upper.iter().copied()).collect();
    let tol = config.endpoint_tolerance;
    let opts = lbfgs::Options {
        memory: config.lbfgs_memory,
        max_iterations: config.max_inner_iterations,
        gradient_tolerance: 0.0,
        gradient_scale: 1.0,
        objective_target: Some(0.5 * (0.1 * tol).powi(2)),
    };
    let n = spec.state_dim;
    let outcome = lbfgs::minimize(&controls, &lower, &upper, &opts, |u| {
        let roll = shooting::rollout(spec, from, u, &steps, 0.0).ok()?;
        let c: Vec<f64> = roll.terminal(n).iter().zip(to).map(|(a, b)| a - b).collect();
        let f = 0.5 * c.iter().map(|v| v * v).sum::<f64>();
        let g = shooting::adjoint_gradient(spec, &roll, u, &steps, 0.0, &c);
        Some((f, g))
    })?;
    let roll = shooting::rollout(spec, from, &outcome.x, &steps, 0.0).ok()?;
    Some(Trajectory::from_rollout(spec, &roll, &outcome.x, &steps, Some(to)))
}

/// Shortest horizon (to bisection resolution) on which `to` is reached from
/// `from` within the endpoint tolerance, with the steering trajectory.
///
/// Costs on the returned trajectory are raw running costs (`v̄` is not
/// subtracted).
pub fn min_time_steer(
    spec: &ProblemSpec,
    from: &DVector<f64>,
    to: &DVector<f64>,
    config: &SolverConfig,
) -> Result<(f64, Trajectory)> {
    config.validate()?;
    check_state(spec, from, "start state")?;
    check_state(spec, to, "target state")?;
    let tol = config.endpoint_tolerance;
    let (a, b) = (from.as_slice(), to.as_slice());
    if distance(a, b) <= tol {
        return Ok((
            0.0,
            Trajectory {
                grid: vec![0.0],
                states: vec![from.clone()],
                controls: Vec::new(),
                shifted_cost_total: 0.0,
                raw_cost_total: 0.0,
                endpoint_violation: distance(a, b),
            },
        ));
    }
    let feasible = |t: &Trajectory| t.endpoint_violation <= tol;

    // Coarse doubling from a short horizon finds a feasible upper bracket
    // without paying for a long-horizon solve when the target is close.
    let mut lo = 0.0;
    let mut hi = MIN_TIME_RESOLUTION;
    let mut best = None;
    let mut guess: Option<Trajectory> = None;
    loop {
        let attempt = feasibility(spec, a, b, hi, config, guess.as_ref());
        match attempt {
            Some(t) if feasible(&t) => {
                best = Some(t);
                break;
            }
            Some(t) => {
                lo = hi;
                guess = Some(t);
            }
            None => lo = hi,
        }
        if hi >= MIN_TIME_HORIZON_MAX {
            break;
        }
        hi = (2.0 * hi).min(MIN_TIME_HORIZON_MAX);
    }
    let Some(mut best) = best else {
        return Err(Error::Unreachable {
            tau_max: MIN_TIME_HORIZON_MAX,
        });
    };
    while hi - lo > MIN_TIME_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        match feasibility(spec, a, b, mid, config, Some(&best)) {
            Some(t) if feasible(&t) => {
                hi = mid;
                best = t;
            }
            _ => lo = mid,
        }
    }
    Ok((hi, best))
}

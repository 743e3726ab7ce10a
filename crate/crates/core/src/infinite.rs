//! Forward and backward infinite-horizon values by truncation.
//!
//! Each truncated problem runs from the given state to the turnpike `ȳ`.
//! Because resting at `(ȳ, ū)` is free, a longer truncation can only lower
//! the optimal cost, so the ladder of estimates decreases towards the
//! infinite-horizon value.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::ocp::{solve_finite_horizon_from, SolverConfig, Trajectory};
use crate::static_opt::StaticSolution;

pub const DEFAULT_HORIZONS: [f64; 4] = [5.0, 10.0, 20.0, 40.0];

/// Relative change between consecutive rungs below which the ladder stops.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Dynamics `−f`, starting from the terminal state.
    Backward,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LadderMode {
    /// Every rung solved independently, in parallel.
    #[default]
    Concurrent,
    /// Rungs solved in order, each warm-started from the previous one.
    WarmStart,
}

#[derive(Debug, Clone)]
pub struct InfiniteValueEstimate {
    pub value: f64,
    pub horizon_used: f64,
    pub estimates_by_horizon: Vec<(f64, f64)>,
    pub tail_distance: f64,
    pub direction: Direction,
    pub converged: bool,
    /// Set when the ladder ran out before the estimates settled.
    pub warning: Option<String>,
    /// Optimal trajectory at `horizon_used`; for the backward direction it is
    /// a trajectory of `−f` starting at the supplied state.
    pub trajectory: Trajectory,
    pub endpoint_tolerance: f64,
}

fn settled(previous: f64, current: f64) -> bool {
    (current - previous).abs() < CONVERGENCE_TOLERANCE * (1.0 + current.abs())
}

fn check_ladder(horizons: &[f64]) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::Precondition("empty horizon ladder".into()));
    }
    if horizons.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::Precondition("horizons must be positive".into()));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("horizons must be increasing".into()));
    }
    Ok(())
}

/// Ladder estimate in either direction.
pub fn estimate(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    start: &DVector<f64>,
    horizons: &[f64],
    config: &SolverConfig,
    direction: Direction,
    mode: LadderMode,
) -> Result<InfiniteValueEstimate> {
    check_ladder(horizons)?;
    let system = match direction {
        Direction::Forward => spec.clone(),
        Direction::Backward => spec.reversed(),
    };
    let target = &turnpike.y_bar;
    let mut solved: Vec<(f64, Trajectory)> = Vec::new();
    let mut converged = false;
    match mode {
        LadderMode::WarmStart => {
            for &t in horizons {
                let warm = solved.last().map(|(_, tr)| tr);
                let traj = solve_finite_horizon_from(&system, turnpike, t, start, target, config, warm)?;
                solved.push((t, traj));
                if let [.., (_, a), (_, b)] = solved.as_slice() {
                    if settled(a.shifted_cost_total, b.shifted_cost_total) {
                        converged = true;
                        break;
                    }
                }
            }
        }
        LadderMode::Concurrent => {
            let outcomes: Vec<Result<Trajectory>> = horizons
                .par_iter()
                .map(|&t| solve_finite_horizon_from(&system, turnpike, t, start, target, config, None))
                .collect();
            // Rungs past the convergence point are discarded, failures included.
            for (&t, outcome) in horizons.iter().zip(outcomes) {
                solved.push((t, outcome?));
                if let [.., (_, a), (_, b)] = solved.as_slice() {
                    if settled(a.shifted_cost_total, b.shifted_cost_total) {
                        converged = true;
                        break;
                    }
                }
            }
        }
    }
    let estimates_by_horizon: Vec<(f64, f64)> =
        solved.iter().map(|(t, tr)| (*t, tr.shifted_cost_total)).collect();
    let (horizon_used, trajectory) = solved.pop().expect("ladder is nonempty");
    let warning = (!converged).then(|| {
        format!(
            "{} estimate still moving at horizon {horizon_used}; extend the ladder",
            direction.tag()
        )
    });
    Ok(InfiniteValueEstimate {
        value: trajectory.shifted_cost_total,
        horizon_used,
        estimates_by_horizon,
        tail_distance: trajectory.endpoint_violation,
        direction,
        converged,
        warning,
        trajectory,
        endpoint_tolerance: config.endpoint_tolerance,
    })
}

/// `v_f(x)` estimate.
pub fn estimate_forward(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    x: &DVector<f64>,
    horizons: &[f64],
    config: &SolverConfig,
) -> Result<InfiniteValueEstimate> {
    estimate(spec, turnpike, x, horizons, config, Direction::Forward, LadderMode::default())
}

/// `v_b(z)` estimate, solved on the reversed dynamics `−f`.
pub fn estimate_backward(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    z: &DVector<f64>,
    horizons: &[f64],
    config: &SolverConfig,
) -> Result<InfiniteValueEstimate> {
    estimate(spec, turnpike, z, horizons, config, Direction::Backward, LadderMode::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// `(t, ‖y(t) − ȳ‖)` at `0, T/4, T/2, 3T/4, T`.
    pub samples: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Distance to the turnpike at the quartiles of the retained trajectory.
pub fn tail_decay_check(estimate: &InfiniteValueEstimate, turnpike: &StaticSolution) -> DecayReport {
    let traj = &estimate.trajectory;
    let horizon = traj.horizon();
    let last = traj.states.len() - 1;
    let samples: Vec<(f64, f64)> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|q| {
            let t = q * horizon;
            let k = if horizon > 0.0 {
                ((t / horizon) * last as f64).round() as usize
            } else {
                0
            };
            (traj.grid[k], (&traj.states[k] - &turnpike.y_bar).norm())
        })
        .collect();
    let pass = samples[3].1 <= 0.1 * samples[0].1 + 1e-4
        && estimate.tail_distance <= estimate.endpoint_tolerance;
    DecayReport { samples, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use crate::static_opt::{solve_static_multistart, MultiStart};
    use nalgebra::dvector;

    fn setup(spec: &ProblemSpec) -> StaticSolution {
        solve_static_multistart(spec, &MultiStart::default()).unwrap()
    }

    #[test]
    fn starting_on_the_turnpike_costs_nothing() {
        let spec = builtin::p1();
        let st = setup(&spec);
        let cfg = SolverConfig::default();
        let f = estimate_forward(&spec, &st, &dvector![1.0], &DEFAULT_HORIZONS, &cfg).unwrap();
        let b = estimate_backward(&spec, &st, &dvector![1.0], &DEFAULT_HORIZONS, &cfg).unwrap();
        for e in [&f, &b] {
            assert!(e.value.abs() < 1e-8);
            assert!(e.converged);
            assert!(e.estimates_by_horizon.iter().all(|(_, v)| v.abs() < 1e-8));
            assert!(tail_decay_check(e, &st).pass);
        }
    }

    #[test]
    fn p1_forward_ladder_is_monotone_and_close_to_one() {
        let spec = builtin::p1();
        let st = setup(&spec);
        let cfg = SolverConfig::default();
        let e = estimate_forward(&spec, &st, &dvector![0.0], &[5.0, 10.0, 20.0], &cfg).unwrap();
        assert!((e.value - 1.0).abs() < 1e-3, "{}", e.value);
        for w in e.estimates_by_horizon.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-6);
        }
        let report = tail_decay_check(&e, &st);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn ladder_modes_agree() {
        let spec = builtin::p3();
        let st = setup(&spec);
        let cfg = SolverConfig::default();
        let x = dvector![1.5];
        let a = estimate(&spec, &st, &x, &DEFAULT_HORIZONS, &cfg, Direction::Forward, LadderMode::Concurrent)
            .unwrap();
        let b = estimate(&spec, &st, &x, &DEFAULT_HORIZONS, &cfg, Direction::Forward, LadderMode::WarmStart)
            .unwrap();
        assert_eq!(a.estimates_by_horizon.len(), b.estimates_by_horizon.len());
        for (p, q) in a.estimates_by_horizon.iter().zip(&b.estimates_by_horizon) {
            assert!((p.1 - q.1).abs() < 1e-6, "{p:?} {q:?}");
        }
    }

    #[test]
    fn unconverged_ladder_warns() {
        let spec = builtin::p1();
        let st = setup(&spec);
        let e = estimate_forward(&spec, &st, &dvector![0.0], &[1.0, 2.0], &SolverConfig::default()).unwrap();
        assert!(!e.converged);
        assert!(e.warning.is_some());
        assert_eq!(e.horizon_used, 2.0);
    }

    #[test]
    fn bad_ladders_are_rejected() {
        let spec = builtin::p1();
        let st = setup(&spec);
        let cfg = SolverConfig::default();
        assert!(estimate_forward(&spec, &st, &dvector![0.0], &[], &cfg).is_err());
        assert!(estimate_forward(&spec, &st, &dvector![0.0], &[5.0, 5.0], &cfg).is_err());
    }
}

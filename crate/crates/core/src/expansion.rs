//! Numerical check of `v(T, x, z) = T·v̄ + v_f(x) + v_b(z) + o(1)`.
//!
//! [`residual_series`] solves the two-point problem over a list of horizons
//! and compares it with the infinite-horizon estimates. Each row also gets
//! an explicit admissible control (the witness) whose cost bounds `C_T`
//! from above: follow the forward infinite-horizon optimum until `T/2 − 1`,
//! steer to the turnpike in minimum time, rest there, leave it along the
//! time-reversed minimum-time steering of the backward problem and finish
//! with the time-reversed backward optimum.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::infinite::{estimate_backward, estimate_forward, InfiniteValueEstimate, DEFAULT_HORIZONS};
use crate::model::ProblemSpec;
use crate::ocp::{min_time_steer, shooting, solve_finite_horizon, SolverConfig, Trajectory};
use crate::static_opt::StaticSolution;

/// `|r(T_max)|` must stay below this multiple of `1 + v_f + v_b`.
pub const DEFAULT_TOLERANCE_FACTOR: f64 = 0.02;

/// Slack allowed when checking that `|r|` does not increase.
pub const MONOTONE_SLACK: f64 = 1e-6;

/// Radius around `ȳ` inside which the witness trusts minimum-time steering.
pub const DEFAULT_GAMMA: f64 = 1.0;

/// Endpoint tolerance of the minimum-time pieces of the witness.
const WITNESS_STEER_TOLERANCE: f64 = 1e-9;

/// Upper bound on the step of the resting piece of the witness.
const REST_STEP: f64 = 0.05;

/// Grid point closest to the turnpike; ties go to the point nearest `T/2`,
/// then to the earliest one.
pub fn midpoint(traj: &Trajectory, turnpike: &StaticSolution) -> (f64, f64) {
    let half = 0.5 * traj.horizon();
    let mut best: Option<(f64, f64)> = None;
    for (t, y) in traj.grid.iter().zip(&traj.states) {
        let d = (y - &turnpike.y_bar).norm();
        let better = match best {
            None => true,
            Some((bt, bd)) => {
                let tie = (d - bd).abs() <= 1e-15 * (1.0 + bd);
                if tie {
                    (t - half).abs() < (bt - half).abs()
                } else {
                    d < bd
                }
            }
        };
        if better {
            best = Some((*t, d));
        }
    }
    best.unwrap_or((0.0, f64::NAN))
}

/// The concatenated control and its cost decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub steps: Vec<f64>,
    pub controls: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    /// Shifted cost of the whole control.
    pub cost: f64,
    /// Shifted cost of the five pieces, in time order.
    pub piece_costs: [f64; 5],
    pub endpoint_error: f64,
    /// Minimum-time budgets of the forward and backward steering pieces.
    pub steer_times: (f64, f64),
}

/// Controls of `traj` on `[0, s]` (the last step possibly shortened).
fn head(traj: &Trajectory, s: f64) -> (Vec<f64>, Vec<DVector<f64>>) {
    let mut steps = Vec::new();
    let mut controls = Vec::new();
    for k in 0..traj.intervals() {
        let (a, b) = (traj.grid[k], traj.grid[k + 1]);
        if a >= s - 1e-12 {
            break;
        }
        steps.push(b.min(s) - a);
        controls.push(traj.controls[k].clone());
    }
    (steps, controls)
}

fn flatten(controls: &[DVector<f64>]) -> Vec<f64> {
    controls.iter().flat_map(|u| u.iter().copied()).collect()
}

fn endpoint(spec: &ProblemSpec, x: &DVector<f64>, steps: &[f64], controls: &[DVector<f64>]) -> Result<DVector<f64>> {
    let roll = shooting::rollout(spec, x.as_slice(), &flatten(controls), steps, 0.0)
        .map_err(|index| Error::BlowUp { index })?;
    Ok(DVector::from_column_slice(roll.terminal(spec.state_dim)))
}

/// Builds the five-piece witness on `[0, T]` from the forward trajectory
/// `fwd` (from `x`) and the backward trajectory `bwd` (of `−f`, from `z`).
pub fn build_witness(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    fwd: &Trajectory,
    bwd: &Trajectory,
    horizon: f64,
    config: &SolverConfig,
) -> Result<Witness> {
    build_witness_with_radius(spec, turnpike, fwd, bwd, horizon, config, DEFAULT_GAMMA)
}

/// [`build_witness`] with an explicit trust radius `gamma`.
pub fn build_witness_with_radius(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    fwd: &Trajectory,
    bwd: &Trajectory,
    horizon: f64,
    config: &SolverConfig,
    gamma: f64,
) -> Result<Witness> {
    if !(horizon >= 2.0) {
        return Err(Error::Precondition(format!("witness needs T >= 2, got {horizon}")));
    }
    let s = 0.5 * horizon - 1.0;
    let reversed = spec.reversed();
    let fwd = fwd.extended_at_rest(s, turnpike);
    let bwd = bwd.extended_at_rest(s, turnpike);
    let x = &fwd.states[0];
    let z = &bwd.states[0];

    let (a_steps, a_controls) = head(&fwd, s);
    let y_f = endpoint(spec, x, &a_steps, &a_controls)?;
    let (e_steps_rev, e_controls_rev) = head(&bwd, s);
    let y_b = endpoint(&reversed, z, &e_steps_rev, &e_controls_rev)?;
    for (what, y) in [("forward", &y_f), ("backward", &y_b)] {
        let d = (y - &turnpike.y_bar).norm();
        if d > gamma {
            return Err(Error::NotConverged(format!(
                "{what} trajectory is {d:.3e} from the turnpike at T/2-1, outside the radius {gamma}; \
                 raise the infinite-horizon ladder"
            )));
        }
    }

    let steer_cfg = SolverConfig {
        endpoint_tolerance: WITNESS_STEER_TOLERANCE,
        ..config.clone()
    };
    let (tau_f, steer_f) = min_time_steer(spec, &y_f, &turnpike.y_bar, &steer_cfg)?;
    let (tau_b, steer_b) = min_time_steer(&reversed, &y_b, &turnpike.y_bar, &steer_cfg)?;
    let rest = 2.0 - tau_f - tau_b;
    if rest < 0.0 {
        return Err(Error::NotConverged(format!(
            "minimum-time budgets {tau_f:.3} + {tau_b:.3} exceed the two time units around T/2; \
             raise the infinite-horizon ladder"
        )));
    }
    let rest_intervals = (rest / REST_STEP).ceil() as usize;

    let mut pieces: Vec<(Vec<f64>, Vec<DVector<f64>>)> = Vec::with_capacity(5);
    pieces.push((a_steps, a_controls));
    pieces.push((steer_f.steps(), steer_f.controls.clone()));
    pieces.push((
        vec![rest / rest_intervals.max(1) as f64; rest_intervals],
        vec![turnpike.u_bar.clone(); rest_intervals],
    ));
    let reversed_piece = |steps: Vec<f64>, controls: Vec<DVector<f64>>| {
        (steps.into_iter().rev().collect::<Vec<_>>(), controls.into_iter().rev().collect::<Vec<_>>())
    };
    pieces.push(reversed_piece(steer_b.steps(), steer_b.controls.clone()));
    pieces.push(reversed_piece(e_steps_rev, e_controls_rev));

    let steps: Vec<f64> = pieces.iter().flat_map(|p| p.0.iter().copied()).collect();
    let controls: Vec<DVector<f64>> = pieces.iter().flat_map(|p| p.1.iter().cloned()).collect();
    let roll = shooting::rollout(spec, x.as_slice(), &flatten(&controls), &steps, turnpike.v_bar)
        .map_err(|index| Error::BlowUp { index })?;
    let mut piece_costs = [0.0; 5];
    let mut k = 0;
    for (i, piece) in pieces.iter().enumerate() {
        let len = piece.0.len();
        piece_costs[i] = roll.shifted_increments[k..k + len].iter().sum();
        k += len;
    }
    let n = spec.state_dim;
    let end = roll.terminal(n);
    let endpoint_error = end.iter().zip(z.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(Witness {
        states: roll.states.chunks(n).map(DVector::from_column_slice).collect(),
        steps,
        controls,
        cost: roll.shifted,
        piece_costs,
        endpoint_error,
        steer_times: (tau_f, tau_b),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionRow {
    pub horizon: f64,
    /// `v(T, x, z)`.
    pub value: f64,
    /// `C_T`.
    pub shifted_cost: f64,
    /// `v − T·v̄ − v_f − v_b`.
    pub residual: f64,
    pub midpoint_time: f64,
    pub midpoint_distance: f64,
    pub witness_cost: Option<f64>,
    pub witness_endpoint_error: Option<f64>,
    /// Distance profile `(t, ‖y(t) − ȳ‖)` of the optimal trajectory.
    pub distance_profile: Vec<(f64, f64)>,
    /// Set when the row (or its witness) could not be computed.
    pub error: Option<String>,
}

impl ExpansionRow {
    fn failed(horizon: f64, message: String) -> Self {
        ExpansionRow {
            horizon,
            value: f64::NAN,
            shifted_cost: f64::NAN,
            residual: f64::NAN,
            midpoint_time: f64::NAN,
            midpoint_distance: f64::NAN,
            witness_cost: None,
            witness_endpoint_error: None,
            distance_profile: Vec::new(),
            error: Some(message),
        }
    }

    pub fn is_solved(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct ExpansionReport {
    pub v_bar: f64,
    pub v_f: f64,
    pub v_b: f64,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub rows: Vec<ExpansionRow>,
    pub tolerance: f64,
    pub pass: bool,
    pub forward: InfiniteValueEstimate,
    pub backward: InfiniteValueEstimate,
}

impl ExpansionReport {
    pub fn residual_at_max(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.residual)
    }
}

#[derive(Debug, Clone)]
pub struct ExpansionOptions {
    pub infinite_horizons: Vec<f64>,
    pub tolerance_factor: f64,
    pub gamma: f64,
    pub witness: bool,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        ExpansionOptions {
            infinite_horizons: DEFAULT_HORIZONS.to_vec(),
            tolerance_factor: DEFAULT_TOLERANCE_FACTOR,
            gamma: DEFAULT_GAMMA,
            witness: true,
        }
    }
}

/// Pass rule: small final residual and non-increasing `|r|` over the last
/// three rows, every row solved.
pub fn expansion_passes(rows: &[ExpansionRow], tolerance: f64) -> bool {
    if rows.is_empty() || rows.iter().any(|r| !r.is_solved()) {
        return false;
    }
    let tail = &rows[rows.len().saturating_sub(3)..];
    let monotone = tail
        .windows(2)
        .all(|w| w[1].residual.abs() <= w[0].residual.abs() + MONOTONE_SLACK);
    monotone && rows.last().is_some_and(|r| r.residual.abs() <= tolerance)
}

pub fn residual_series(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    x: &DVector<f64>,
    z: &DVector<f64>,
    horizons: &[f64],
    config: &SolverConfig,
) -> Result<ExpansionReport> {
    residual_series_with(spec, turnpike, x, z, horizons, config, &ExpansionOptions::default())
}

pub fn residual_series_with(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    x: &DVector<f64>,
    z: &DVector<f64>,
    horizons: &[f64],
    config: &SolverConfig,
    options: &ExpansionOptions,
) -> Result<ExpansionReport> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] <= 0.0 {
        return Err(Error::Precondition("horizons must be positive and increasing".into()));
    }
    let (forward, backward) = rayon::join(
        || estimate_forward(spec, turnpike, x, &options.infinite_horizons, config),
        || estimate_backward(spec, turnpike, z, &options.infinite_horizons, config),
    );
    let (forward, backward) = (forward?, backward?);
    let (v_f, v_b) = (forward.value, backward.value);

    let rows: Vec<ExpansionRow> = horizons
        .par_iter()
        .map(|&t| {
            let traj = match solve_finite_horizon(spec, turnpike, t, x, z, config) {
                Ok(traj) => traj,
                Err(e) => return ExpansionRow::failed(t, e.to_string()),
            };
            let (midpoint_time, midpoint_distance) = midpoint(&traj, turnpike);
            let mut row = ExpansionRow {
                horizon: t,
                value: traj.raw_cost_total,
                shifted_cost: traj.shifted_cost_total,
                residual: traj.raw_cost_total - t * turnpike.v_bar - v_f - v_b,
                midpoint_time,
                midpoint_distance,
                witness_cost: None,
                witness_endpoint_error: None,
                distance_profile: traj
                    .grid
                    .iter()
                    .zip(&traj.states)
                    .map(|(t, y)| (*t, (y - &turnpike.y_bar).norm()))
                    .collect(),
                error: None,
            };
            if options.witness {
                match build_witness_with_radius(
                    spec,
                    turnpike,
                    &forward.trajectory,
                    &backward.trajectory,
                    t,
                    config,
                    options.gamma,
                ) {
                    Ok(w) => {
                        row.witness_cost = Some(w.cost);
                        row.witness_endpoint_error = Some(w.endpoint_error);
                    }
                    Err(e) => row.error = Some(format!("witness: {e}")),
                }
            }
            row
        })
        .collect();
    let tolerance = options.tolerance_factor * (1.0 + v_f + v_b);
    let pass = expansion_passes(&rows, tolerance);
    Ok(ExpansionReport {
        v_bar: turnpike.v_bar,
        v_f,
        v_b,
        x: x.clone(),
        z: z.clone(),
        rows,
        tolerance,
        pass,
        forward,
        backward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use crate::static_opt::{solve_static_multistart, MultiStart};
    use nalgebra::dvector;

    fn turnpike(spec: &ProblemSpec) -> StaticSolution {
        solve_static_multistart(spec, &MultiStart::default()).unwrap()
    }

    #[test]
    fn midpoint_tie_break_prefers_the_middle() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let traj = solve_finite_horizon(&spec, &st, 3.0, &dvector![1.0], &dvector![1.0], &SolverConfig::default())
            .unwrap();
        let (t, d) = midpoint(&traj, &st);
        assert_eq!(d, 0.0);
        assert!((t - 1.5).abs() < 1e-12);
    }

    #[test]
    fn resting_witness_is_free() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let cfg = SolverConfig::default();
        let f = estimate_forward(&spec, &st, &dvector![1.0], &DEFAULT_HORIZONS, &cfg).unwrap();
        let b = estimate_backward(&spec, &st, &dvector![1.0], &DEFAULT_HORIZONS, &cfg).unwrap();
        for t in [2.0, 3.3, 8.0] {
            let w = build_witness(&spec, &st, &f.trajectory, &b.trajectory, t, &cfg).unwrap();
            assert!(w.cost.abs() < 1e-12);
            assert!(w.endpoint_error < 1e-12);
            assert!((w.steps.iter().sum::<f64>() - t).abs() < 1e-9);
        }
    }

    #[test]
    fn p1_series_from_turnpike_is_flat() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let report = residual_series(&spec, &st, &dvector![1.0], &dvector![1.0], &[2.0, 5.0, 10.0], &SolverConfig::default())
            .unwrap();
        assert!(report.pass);
        for row in &report.rows {
            assert!(row.residual.abs() < 1e-8);
            assert_eq!(row.witness_cost, Some(0.0));
        }
    }

    #[test]
    fn witness_bounds_the_optimum() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let cfg = SolverConfig::default();
        let (x, z) = (dvector![0.0], dvector![0.0]);
        let f = estimate_forward(&spec, &st, &x, &DEFAULT_HORIZONS, &cfg).unwrap();
        let b = estimate_backward(&spec, &st, &z, &DEFAULT_HORIZONS, &cfg).unwrap();
        let w = build_witness(&spec, &st, &f.trajectory, &b.trajectory, 20.0, &cfg).unwrap();
        let opt = solve_finite_horizon(&spec, &st, 20.0, &x, &z, &cfg).unwrap();
        assert!(opt.shifted_cost_total <= w.cost + 1e-6);
        assert!(w.cost <= f.value + b.value + 0.05, "{}", w.cost);
        assert!(w.endpoint_error <= 1e-4);
        assert!(w.piece_costs[2].abs() < 1e-12);
    }

    #[test]
    fn witness_rejects_short_horizons_and_far_tails() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let cfg = SolverConfig::default();
        let f = estimate_forward(&spec, &st, &dvector![0.0], &[1.0], &cfg).unwrap();
        assert!(build_witness(&spec, &st, &f.trajectory, &f.trajectory, 1.0, &cfg).is_err());
        // γ small enough that the forward state at T/2 − 1 lies outside it.
        let r = build_witness_with_radius(&spec, &st, &f.trajectory, &f.trajectory, 2.5, &cfg, 1e-3);
        assert!(matches!(r, Err(Error::NotConverged(_))), "{r:?}");
    }

    #[test]
    fn pass_rule() {
        let row = |r: f64| ExpansionRow {
            residual: r,
            value: 0.0,
            ..ExpansionRow::failed(1.0, String::new())
        };
        assert!(expansion_passes(&[row(0.5), row(0.1), row(0.01)], 0.02));
        assert!(!expansion_passes(&[row(0.5), row(0.1), row(0.03)], 0.02));
        assert!(!expansion_passes(&[row(0.01), row(0.015), row(0.01)], 0.02));
        assert!(!expansion_passes(&[row(0.01), ExpansionRow::failed(2.0, "x".into())], 0.02));
    }
}

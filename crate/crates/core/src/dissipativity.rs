//! Sampled certificates for the strict dissipativity inequality
//!
//! ```text
//! S(y(t_a)) + ∫_{t_a}^{t_b} w dt − S(y(t_b)) ≥ κ ∫_{t_a}^{t_b} ‖(y − ȳ, u − ū)‖² dt
//! ```
//!
//! checked on windows of stored trajectories. A passing certificate is
//! evidence on the sampled windows only.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::ocp::Trajectory;
use crate::static_opt::StaticSolution;

/// Most negative slack still accepted by a certificate.
pub const PASS_TOLERANCE: f64 = 1e-6;

/// Random windows drawn per trajectory in addition to every prefix.
pub const DEFAULT_RANDOM_WINDOWS: usize = 32;

const FIT_GRID: usize = 20;
const FIT_BISECTIONS: usize = 20;
const FIT_BASE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageKind {
    LinearMultiplier,
    UserSupplied,
    Zero,
}

impl StorageKind {
    pub fn tag(self) -> &'static str {
        match self {
            StorageKind::LinearMultiplier => "linear-in-lambda",
            StorageKind::UserSupplied => "user-supplied",
            StorageKind::Zero => "zero",
        }
    }
}

type StorageFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An evaluable storage function `S(y)`.
#[derive(Clone)]
pub struct Storage {
    pub kind: StorageKind,
    eval: StorageFn,
    /// Set for the linear storage when the multiplier is nonzero.
    unbounded: bool,
}

impl fmt::Debug for Storage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Storage")
            .field("kind", &self.kind)
            .field("unbounded", &self.unbounded)
            .finish()
    }
}

impl Storage {
    pub fn zero() -> Self {
        Storage {
            kind: StorageKind::Zero,
            eval: Arc::new(|_| 0.0),
            unbounded: false,
        }
    }

    /// `S(y) = ⟨λ, y − ȳ⟩`.
    pub fn linear(lambda: DVector<f64>, y_bar: DVector<f64>) -> Self {
        let unbounded = lambda.amax() > 0.0;
        Storage {
            kind: StorageKind::LinearMultiplier,
            eval: Arc::new(move |y| {
                lambda
                    .iter()
                    .zip(y.iter().zip(y_bar.iter()))
                    .map(|(l, (a, b))| l * (a - b))
                    .sum()
            }),
            unbounded,
        }
    }

    pub fn user<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Storage {
            kind: StorageKind::UserSupplied,
            eval: Arc::new(f),
            unbounded: false,
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.eval)(y)
    }

    /// `−S`, the storage of the time-reversed system.
    pub fn negated(&self) -> Self {
        let inner = Arc::clone(&self.eval);
        Storage {
            kind: self.kind,
            eval: Arc::new(move |y| -inner(y)),
            unbounded: self.unbounded,
        }
    }
}

/// `⟨λ̄, y − ȳ⟩`.
pub fn default_storage(turnpike: &StaticSolution) -> Storage {
    Storage::linear(turnpike.lambda_bar.clone(), turnpike.y_bar.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageCertificate {
    pub storage_description: String,
    pub alpha_coefficient: f64,
    pub trajectories_checked: usize,
    pub windows_checked: usize,
    pub worst_violation: f64,
    pub pass: bool,
    /// Largest `|S|` met on the checked states.
    pub storage_bound: f64,
    pub caveat: Option<String>,
}

/// Per-interval trapezoidal integrals of `w` and of the squared deviation.
struct Integrals {
    storage: Vec<f64>,
    supply: Vec<f64>,
    deviation: Vec<f64>,
}

impl Integrals {
    fn new(spec: &ProblemSpec, turnpike: &StaticSolution, storage: &Storage, traj: &Trajectory) -> Self {
        let n = traj.intervals();
        let mut supply = vec![0.0; n + 1];
        let mut deviation = vec![0.0; n + 1];
        let dev = |y: &DVector<f64>, u: &DVector<f64>| {
            (y - &turnpike.y_bar).norm_squared() + (u - &turnpike.u_bar).norm_squared()
        };
        for k in 0..n {
            let h = traj.grid[k + 1] - traj.grid[k];
            let u = &traj.controls[k];
            let (ya, yb) = (&traj.states[k], &traj.states[k + 1]);
            let wa = spec.cost_rate(ya.as_slice(), u.as_slice()) - turnpike.v_bar;
            let wb = spec.cost_rate(yb.as_slice(), u.as_slice()) - turnpike.v_bar;
            supply[k + 1] = supply[k] + 0.5 * h * (wa + wb);
            deviation[k + 1] = deviation[k] + 0.5 * h * (dev(ya, u) + dev(yb, u));
        }
        Integrals {
            storage: traj.states.iter().map(|y| storage.eval(y.as_slice())).collect(),
            supply,
            deviation,
        }
    }

    fn slack(&self, kappa: f64, a: usize, b: usize) -> f64 {
        self.storage[a] + (self.supply[b] - self.supply[a])
            - self.storage[b]
            - kappa * (self.deviation[b] - self.deviation[a])
    }
}

/// Slack of the inequality on the grid window `[grid[a], grid[b]]`.
pub fn window_slack(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    storage: &Storage,
    kappa: f64,
    traj: &Trajectory,
    a: usize,
    b: usize,
) -> f64 {
    Integrals::new(spec, turnpike, storage, traj).slack(kappa, a, b)
}

/// Every prefix `[0, t_k]` plus `random` windows with seeded endpoints.
pub fn sample_windows(intervals: usize, random: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut windows: Vec<(usize, usize)> = (1..=intervals).map(|k| (0, k)).collect();
    if intervals >= 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..random {
            let a = rng.gen_range(0..intervals);
            let b = rng.gen_range(a + 1..=intervals);
            windows.push((a, b));
        }
    }
    windows
}

struct Prepared {
    integrals: Vec<Integrals>,
    windows: Vec<Vec<(usize, usize)>>,
    storage_bound: f64,
}

fn prepare(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    storage: &Storage,
    trajectories: &[Trajectory],
    random_windows: usize,
    seed: u64,
) -> Prepared {
    let integrals: Vec<Integrals> = trajectories
        .par_iter()
        .map(|t| Integrals::new(spec, turnpike, storage, t))
        .collect();
    let windows = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| sample_windows(t.intervals(), random_windows, seed.wrapping_add(i as u64)))
        .collect();
    let storage_bound = integrals
        .iter()
        .flat_map(|i| i.storage.iter())
        .fold(0.0, |m: f64, s| m.max(s.abs()));
    Prepared {
        integrals,
        windows,
        storage_bound,
    }
}

impl Prepared {
    fn worst(&self, kappa: f64) -> f64 {
        self.integrals
            .par_iter()
            .zip(self.windows.par_iter())
            .map(|(ig, ws)| {
                ws.iter()
                    .map(|&(a, b)| ig.slack(kappa, a, b))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    fn window_count(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }

    fn certificate(&self, storage: &Storage, kappa: f64) -> StorageCertificate {
        let worst_violation = self.worst(kappa);
        StorageCertificate {
            storage_description: storage.kind.tag().to_string(),
            alpha_coefficient: kappa,
            trajectories_checked: self.integrals.len(),
            windows_checked: self.window_count(),
            worst_violation,
            pass: worst_violation >= -PASS_TOLERANCE,
            storage_bound: self.storage_bound,
            caveat: storage
                .unbounded
                .then(|| "linear storage is unbounded on the whole state space; bound holds on checked states only".into()),
        }
    }
}

/// Checks the inequality with `α(r) = κr²` on one trajectory.
pub fn check_dissipativity(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    storage: &Storage,
    kappa: f64,
    traj: &Trajectory,
    random_windows: usize,
    seed: u64,
) -> StorageCertificate {
    check_dissipativity_many(spec, turnpike, storage, kappa, std::slice::from_ref(traj), random_windows, seed)
}

/// As [`check_dissipativity`], aggregated over several trajectories.
pub fn check_dissipativity_many(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    storage: &Storage,
    kappa: f64,
    trajectories: &[Trajectory],
    random_windows: usize,
    seed: u64,
) -> StorageCertificate {
    prepare(spec, turnpike, storage, trajectories, random_windows, seed).certificate(storage, kappa)
}

/// Largest `κ` for which every sampled window has nonnegative slack, with
/// the certificate at that `κ`. Returns `κ = 0` and a failing certificate
/// when plain dissipativity is already refuted.
///
/// Fitting asks for exact nonnegativity rather than the certificate's
/// tolerance, so the fitted `κ` never exceeds what the data supports.
pub fn fit_alpha(
    spec: &ProblemSpec,
    turnpike: &StaticSolution,
    storage: &Storage,
    trajectories: &[Trajectory],
    random_windows: usize,
    seed: u64,
) -> Result<(f64, StorageCertificate)> {
    let prepared = prepare(spec, turnpike, storage, trajectories, random_windows, seed);
    let moving = prepared
        .integrals
        .iter()
        .any(|ig| ig.deviation.last().copied().unwrap_or(0.0) > 1e-14);
    if !moving {
        return Err(Error::Precondition(
            "fitting needs at least one trajectory that leaves the turnpike".into(),
        ));
    }
    let passes = |kappa: f64| prepared.worst(kappa) >= 0.0;
    if !passes(0.0) {
        return Ok((0.0, prepared.certificate(storage, 0.0)));
    }
    let mut lo = 0.0;
    let mut hi = None;
    for k in 0..=FIT_GRID {
        let kappa = FIT_BASE * 2f64.powi(k as i32);
        if passes(kappa) {
            lo = kappa;
        } else {
            hi = Some(kappa);
            break;
        }
    }
    if let Some(mut hi) = hi {
        for _ in 0..FIT_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if passes(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok((lo, prepared.certificate(storage, lo)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use crate::ocp::{integrate, solve_finite_horizon, SolverConfig};
    use crate::static_opt::{solve_static_multistart, MultiStart};
    use nalgebra::dvector;

    fn turnpike(spec: &ProblemSpec) -> StaticSolution {
        solve_static_multistart(spec, &MultiStart::default()).unwrap()
    }

    /// Open-loop trajectory with the given controls on a uniform grid.
    fn open_loop(spec: &ProblemSpec, x: DVector<f64>, controls: Vec<f64>, h: f64) -> Trajectory {
        let grid: Vec<f64> = (0..=controls.len()).map(|k| k as f64 * h).collect();
        let us: Vec<DVector<f64>> = controls.iter().map(|&u| dvector![u]).collect();
        let states = integrate(spec, &x, &us, &grid).unwrap();
        Trajectory {
            grid,
            states,
            controls: us,
            shifted_cost_total: 0.0,
            raw_cost_total: 0.0,
            endpoint_violation: 0.0,
        }
    }

    #[test]
    fn linear_storage_example() {
        let s = Storage::linear(dvector![1.0, -2.0], dvector![0.0, 0.0]);
        assert_eq!(s.eval(&[3.0, 1.0]), 1.0);
        assert_eq!(s.negated().eval(&[3.0, 1.0]), -1.0);
        let p1 = builtin::p1();
        let st = turnpike(&p1);
        assert_eq!(default_storage(&st).eval(&[7.0]), 0.0);
    }

    #[test]
    fn p1_deviation_equals_supply() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let traj = open_loop(&spec, dvector![0.0], (0..40).map(|k| (k as f64 * 0.3).sin()).collect(), 0.05);
        let cert = check_dissipativity(&spec, &st, &Storage::zero(), 1.0, &traj, 32, 7);
        assert!(cert.pass);
        assert!(cert.worst_violation.abs() < 1e-12);
        assert_eq!(cert.windows_checked, 40 + 32);
    }

    #[test]
    fn excessive_margin_is_refuted() {
        // Resting at ȳ with u = 1: w = 1 but the margin asks for 1.5.
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let h = 0.05;
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * h).collect();
        let traj = Trajectory {
            grid,
            states: vec![dvector![1.0]; 21],
            controls: vec![dvector![1.0]; 20],
            shifted_cost_total: 0.0,
            raw_cost_total: 0.0,
            endpoint_violation: 0.0,
        };
        let cert = check_dissipativity(&spec, &st, &Storage::zero(), 1.5, &traj, 0, 0);
        assert!(!cert.pass);
        assert!((cert.worst_violation - (1.0 - 1.5)).abs() < 1e-12);
    }

    #[test]
    fn p2_optimal_trajectory_passes_half_margin() {
        let spec = builtin::p2();
        let st = turnpike(&spec);
        let traj = solve_finite_horizon(
            &spec,
            &st,
            6.0,
            &dvector![0.0, 0.0],
            &dvector![1.5, 0.0],
            &SolverConfig::default(),
        )
        .unwrap();
        let cert = check_dissipativity(&spec, &st, &Storage::zero(), 0.5, &traj, 32, 1);
        assert!(cert.pass && cert.worst_violation > 0.0);
    }

    #[test]
    fn slack_is_additive() {
        let spec = builtin::p3();
        let st = turnpike(&spec);
        let traj = open_loop(&spec, dvector![1.2], (0..60).map(|k| 0.5 * (k as f64 * 0.2).cos()).collect(), 0.05);
        let s = default_storage(&st);
        for kappa in [0.0, 0.3, 2.0] {
            let ab = window_slack(&spec, &st, &s, kappa, &traj, 5, 23);
            let bc = window_slack(&spec, &st, &s, kappa, &traj, 23, 51);
            let ac = window_slack(&spec, &st, &s, kappa, &traj, 5, 51);
            assert!((ab + bc - ac).abs() < 1e-10);
        }
    }

    #[test]
    fn reversal_with_negated_storage_preserves_slack() {
        let spec = builtin::p3();
        let st = turnpike(&spec);
        let traj = open_loop(&spec, dvector![1.2], (0..60).map(|k| 0.5 * (k as f64 * 0.2).cos()).collect(), 0.05);
        let rev = traj.time_reversed();
        let s = default_storage(&st);
        let neg = s.negated();
        let n = traj.intervals();
        for &(a, b) in &[(0, 60), (3, 17), (40, 41)] {
            let fwd = window_slack(&spec, &st, &s, 0.4, &traj, a, b);
            let bwd = window_slack(&spec, &st, &neg, 0.4, &rev, n - b, n - a);
            assert!((fwd - bwd).abs() < 1e-10, "{fwd} {bwd}");
        }
    }

    #[test]
    fn fit_on_p1_family_is_one() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let trajs: Vec<Trajectory> = (0..3)
            .map(|i| open_loop(&spec, dvector![i as f64 * 0.5], vec![0.3 - 0.2 * i as f64; 30], 0.05))
            .collect();
        let (kappa, cert) = fit_alpha(&spec, &st, &Storage::zero(), &trajs, 32, 3).unwrap();
        assert!(kappa <= 1.0 && kappa > 1.0 - 1e-5, "{kappa}");
        assert!(cert.pass);
    }

    #[test]
    fn fit_needs_motion() {
        let spec = builtin::p1();
        let st = turnpike(&spec);
        let traj = open_loop(&spec, dvector![1.0], vec![0.0; 10], 0.1);
        assert!(fit_alpha(&spec, &st, &Storage::zero(), &[traj], 8, 0).is_err());
    }
}

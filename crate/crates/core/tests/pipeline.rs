use nalgebra::{dmatrix, dvector, DMatrix};

use turnpike::dissipativity::{self, Storage};
use turnpike::infinite;
use turnpike::io::{trajectory_from_csv, trajectory_to_csv, Header};
use turnpike::lq::{lq_static, LqProblem};
use turnpike::model::{builtin, json};
use turnpike::ocp::{self, SolverConfig};
use turnpike::pmp;
use turnpike::static_opt::{solve_static_multistart, MultiStart};

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn coth(t: f64) -> f64 {
    1.0 / t.tanh()
}

#[test]
fn json_problem_reproduces_builtin() {
    let doc = r#"{
        "name": "double-integrator",
        "state_dim": 2,
        "control_dim": 1,
        "dynamics": ["y2", "u1"],
        "cost_rate": "(y1 - 1)^2 + y2^2 + u1^2",
        "control_lower": [-4],
        "control_upper": [4]
    }"#;
    let custom = json::from_json_str(doc).unwrap();
    let reference = builtin::p2();
    let config = SolverConfig::default();
    let (x, z) = (dvector![0.0, 0.0], dvector![1.5, 0.0]);
    let tp_a = solve_static_multistart(&custom, &MultiStart::default()).unwrap();
    let tp_b = solve_static_multistart(&reference, &MultiStart::default()).unwrap();
    assert!((&tp_a.y_bar - &tp_b.y_bar).amax() < 1e-10);
    let a = ocp::solve_finite_horizon(&custom, &tp_a, 6.0, &x, &z, &config).unwrap();
    let b = ocp::solve_finite_horizon(&reference, &tp_b, 6.0, &x, &z, &config).unwrap();
    assert!((a.raw_cost_total - b.raw_cost_total).abs() < 1e-8);
}

#[test]
fn scalar_two_point_cost_matches_closed_form() {
    // With e = y − 1, e(0) = −1, e(T) = 0 the optimal cost is coth(T).
    let spec = builtin::p1();
    let tp = solve_static_multistart(&spec, &MultiStart::default()).unwrap();
    let traj = ocp::solve_finite_horizon(&spec, &tp, 10.0, &dvector![0.0], &dvector![1.0], &SolverConfig::default()).unwrap();
    assert!(traj.shifted_cost_total >= 1.0 - 1e-3);
    assert!(traj.shifted_cost_total <= 1.05);
    assert!((traj.shifted_cost_total - coth(10.0)).abs() < 5e-3);
}

#[test]
fn double_integrator_cost_near_quadratic_prediction() {
    let spec = builtin::p2();
    let tp = solve_static_multistart(&spec, &MultiStart::default()).unwrap();
    let traj = ocp::solve_finite_horizon(
        &spec,
        &tp,
        14.0,
        &dvector![0.0, 0.0],
        &dvector![1.0, 0.0],
        &SolverConfig::default(),
    )
    .unwrap();
    // (x − ȳ) = (−1, 0) against P_f = [[√3, 1], [1, √3]]; z = ȳ adds nothing.
    assert!((traj.shifted_cost_total - SQRT3).abs() <= 0.05 * SQRT3);
}

#[test]
fn backward_value_of_displaced_double_integrator() {
    let spec = builtin::p2();
    let tp = solve_static_multistart(&spec, &MultiStart::default()).unwrap();
    let est = infinite::estimate_backward(
        &spec,
        &tp,
        &dvector![2.0, 0.0],
        &infinite::DEFAULT_HORIZONS,
        &SolverConfig::default(),
    )
    .unwrap();
    // (z − ȳ) = (1, 0) against P_b = [[√3, −1], [−1, √3]].
    assert!((est.value - SQRT3).abs() <= 1e-3 * SQRT3, "{}", est.value);
    assert!(infinite::tail_decay_check(&est, &tp).pass);
}

#[test]
fn linear_quadratic_turnpikes_agree() {
    let cases: [(_, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64); 2] = [
        (builtin::p1(), dmatrix![0.0], dmatrix![1.0], dmatrix![1.0], 1.0),
        (builtin::p2(), dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0], DMatrix::identity(2, 2), 1.0),
    ];
    for (spec, a, b, q, y1) in cases {
        let n = spec.state_dim;
        let mut target = nalgebra::DVector::zeros(n);
        target[0] = y1;
        let problem = LqProblem::new(a, b, q, dmatrix![1.0])
            .unwrap()
            .with_targets(target, dvector![0.0])
            .unwrap();
        let exact = lq_static(&problem).unwrap();
        let newton = solve_static_multistart(&spec, &MultiStart::default()).unwrap();
        assert!((&exact.y_bar - &newton.y_bar).amax() < 1e-8);
        assert!((&exact.u_bar - &newton.u_bar).amax() < 1e-8);
        assert!((&exact.lambda_bar - &newton.lambda_bar).amax() < 1e-8);
        assert!((exact.v_bar - newton.v_bar).abs() < 1e-8);
    }
}

#[test]
fn stored_trajectory_keeps_its_extremal_residual() {
    let spec = builtin::p2();
    let tp = solve_static_multistart(&spec, &MultiStart::default()).unwrap();
    let traj = ocp::solve_finite_horizon(
        &spec,
        &tp,
        8.0,
        &dvector![0.0, 0.0],
        &dvector![0.5, 0.0],
        &SolverConfig::default(),
    )
    .unwrap();
    let text = trajectory_to_csv(&Header::new("solve", 0).with("problem", "P2"), &traj);
    let (header, loaded) = trajectory_from_csv(&text).unwrap();
    assert_eq!(header.get("problem"), Some("P2"));
    let direct = pmp::check_extremal(&spec, &traj, &dvector![0.0, 0.0]).unwrap();
    let reread = pmp::check_extremal(&spec, &loaded, &dvector![0.0, 0.0]).unwrap();
    assert!(reread.stationarity_residual <= 1e-3);
    assert!((direct.stationarity_residual - reread.stationarity_residual).abs() < 1e-6);
}

#[test]
fn seeded_runs_are_reproducible() {
    let spec = builtin::p1();
    let a = solve_static_multistart(&spec, &MultiStart::with_seed(99)).unwrap();
    let b = solve_static_multistart(&spec, &MultiStart::with_seed(99)).unwrap();
    assert_eq!(a, b);

    let trajs: Vec<_> = [(0.0, 2.0), (1.5, 0.0), (-1.0, 1.0)]
        .iter()
        .map(|(x, z)| {
            ocp::solve_finite_horizon(&spec, &a, 3.0, &dvector![*x], &dvector![*z], &SolverConfig::default()).unwrap()
        })
        .collect();
    let fit = |seed| dissipativity::fit_alpha(&spec, &a, &Storage::zero(), &trajs, 16, seed).unwrap();
    assert_eq!(fit(5), fit(5));
}

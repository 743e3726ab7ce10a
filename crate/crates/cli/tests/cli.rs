use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn turnpike(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnpike"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("TURNPIKE_THREADS")
        .output()
        .expect("spawn turnpike")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn static_prints_turnpike_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(dir.path(), &["static", "--problem", "P1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("# subcommand=static\n# seed=0\n# problem=P1\n"));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "y1,u1,lambda1,v_bar,residual");
    assert!(rows[1].starts_with("1,0,0,0,"), "{}", rows[1]);
    assert!(dir.path().join("static.csv").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["infinite", "--problem", "P1", "--direction", "f", "--x", "0", "--horizons", "5,10"];
    let a = stdout(&turnpike(dir.path(), &args));
    let b = stdout(&turnpike(dir.path(), &args));
    assert_eq!(a, b);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let negative = turnpike(dir.path(), &["solve", "--problem", "P1", "--T", "-1", "--x", "0", "--z", "0"]);
    assert_eq!(negative.status.code(), Some(1));
    let unknown = turnpike(dir.path(), &["static", "--problem", "P1", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    let missing = turnpike(dir.path(), &["static", "--problem", "nope.json"]);
    assert_eq!(missing.status.code(), Some(1));
    let wrong_dim = turnpike(dir.path(), &["solve", "--problem", "P2", "--T", "2", "--x", "0", "--z", "0,0"]);
    assert_eq!(wrong_dim.status.code(), Some(1));
    let direction = turnpike(dir.path(), &["infinite", "--problem", "P1", "--direction", "x", "--x", "0"]);
    assert_eq!(direction.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(turnpike(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_turnpike"))
        .args(["static", "--problem", "P1", "--output-dir"])
        .arg(dir.path())
        .env("TURNPIKE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn solve_then_pmp_on_the_written_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(dir.path(), &["solve", "--problem", "P1", "--T", "4", "--x", "0", "--z", "0.5", "--N", "80"]);
    assert_eq!(out.status.code(), Some(0));
    let summary = data_lines(&stdout(&out))[1].to_string();
    let cells: Vec<f64> = summary.split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cells[0], 4.0);
    assert!(cells[3] <= 1e-6);

    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.contains("# problem=P1\n"));
    assert_eq!(data_lines(&traj).len(), 82);

    let path = dir.path().join("trajectory.csv");
    let pmp = turnpike(dir.path(), &["pmp", "--trajectory", path.to_str().unwrap()]);
    assert_eq!(pmp.status.code(), Some(0));
    let row = data_lines(&stdout(&pmp))[1].to_string();
    let residual: f64 = row.split(',').next().unwrap().parse().unwrap();
    assert!(residual <= 1e-3, "{row}");
    assert!(dir.path().join("pmp_costates.csv").exists());
}

#[test]
fn expansion_passes_on_p1_and_writes_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(dir.path(), &["expansion", "--problem", "P1", "--x", "0", "--z", "0", "--horizons", "5,10,20"]);
    assert_eq!(out.status.code(), Some(0));
    let summary = data_lines(&stdout(&out))[1].to_string();
    assert!(summary.starts_with("pass,0,"), "{summary}");
    for name in ["expansion.csv", "residuals.csv", "distance_T5.csv", "distance_T10.csv", "distance_T20.csv"] {
        let body = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(body.starts_with("# subcommand=expansion\n"), "{name}");
    }
    let residuals = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert_eq!(data_lines(&residuals).len(), 4);
}

#[test]
fn expansion_failure_exits_two() {
    // At T = 2 the residual of P1 is 2·tanh(1) − 2 ≈ −0.48, far outside the band.
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(dir.path(), &["expansion", "--problem", "P1", "--x", "0", "--z", "0", "--horizons", "1,2", "--no-witness"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(data_lines(&stdout(&out))[1].starts_with("fail,"));
}

#[test]
fn lq_prints_riccati_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(dir.path(), &["lq", "--A", "0,1;0,0", "--B", "0;1", "--Q", "1,0;0,1", "--R", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows = data_lines(&text);
    assert_eq!(rows[0], "p1,p2");
    assert_eq!(rows[1], "1.73205080757,1");
    assert_eq!(rows[2], "1,1.73205080757");
    assert_eq!(rows[3], "re,im");
    let re: f64 = rows[4].split(',').next().unwrap().parse().unwrap();
    assert!(re < 0.0);

    let unstabilizable = turnpike(dir.path(), &["lq", "--A", "1", "--B", "0", "--Q", "1", "--R", "1"]);
    assert_eq!(unstabilizable.status.code(), Some(1));
}

#[test]
fn dissipativity_over_a_glob() {
    let dir = tempfile::tempdir().unwrap();
    for (i, (x, z)) in [("0", "0.5"), ("2", "1"), ("-1", "0")].iter().enumerate() {
        let sub = dir.path().join(format!("run{i}"));
        let out = turnpike(&sub, &["solve", "--problem", "P1", "--T", "3", "--x", x, "--z", z]);
        assert_eq!(out.status.code(), Some(0));
        fs::rename(sub.join("trajectory.csv"), dir.path().join(format!("traj{i}.csv"))).unwrap();
    }
    let pattern = dir.path().join("traj*.csv");
    let out = turnpike(
        dir.path(),
        &["dissipativity", "--problem", "P1", "--trajectories", pattern.to_str().unwrap(), "--storage", "zero"],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("# certificate=sampled certificate\n"));
    let row = data_lines(&text)[1].to_string();
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[0], "zero");
    let kappa: f64 = cells[1].parse().unwrap();
    assert!((0.9..=1.0).contains(&kappa), "{row}");
    assert_eq!(cells[3], "pass");
    assert_eq!(cells[4], "3");

    let refuted = turnpike(
        dir.path(),
        &["dissipativity", "--problem", "P1", "--trajectories", pattern.to_str().unwrap(), "--storage", "zero", "--kappa", "1.5"],
    );
    assert_eq!(refuted.status.code(), Some(2));

    let none = turnpike(dir.path(), &["dissipativity", "--problem", "P1", "--trajectories", "/nonexistent/*.csv"]);
    assert_eq!(none.status.code(), Some(1));
}

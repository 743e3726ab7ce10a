//! The `turnpike` command-line front-end.
//!
//! Every subcommand prints a CSV document with a `#` comment header on
//! standard output and writes its files into `--output-dir`. Exit codes are
//! 0 on success, 1 on usage, input or I/O errors and 2 when a numerical
//! check fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use turnpike::dissipativity::{self, Storage};
use turnpike::expansion::{self, ExpansionOptions};
use turnpike::infinite::{self, Direction, LadderMode, DEFAULT_HORIZONS};
use turnpike::io::{format_number, format_row, trajectory_from_csv, trajectory_to_csv, Header};
use turnpike::lq::{self, LqProblem};
use turnpike::model::expr::Expr;
use turnpike::model::json::load_problem;
use turnpike::static_opt::{solve_static_multistart, MultiStart, StaticSolution};
use turnpike::{ocp, pmp, Error, ProblemSpec, SolverConfig, Trajectory};

pub const THREADS_ENV: &str = "TURNPIKE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "turnpike", version, about = "Large-horizon value expansion for optimal control problems")]
struct Cli {
    /// Seed for multi-start draws and random dissipativity windows.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving the emitted CSV files.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Grid intervals per unit time.
    #[arg(long, default_value_t = 20)]
    intervals_per_unit: usize,
    /// Accepted `‖y(T) − z‖`.
    #[arg(long, default_value_t = 1e-6)]
    endpoint_tolerance: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            intervals_per_unit_time: self.intervals_per_unit,
            endpoint_tolerance: self.endpoint_tolerance,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turnpike (ȳ, ū), multiplier λ̄ and static value v̄.
    Static {
        #[arg(long)]
        problem: String,
    },
    /// Finite-horizon optimal trajectory from x to z.
    Solve {
        #[arg(long)]
        problem: String,
        #[arg(long = "T", allow_hyphen_values = true)]
        horizon: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        /// Fixed number of grid intervals.
        #[arg(long = "N")]
        intervals: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Forward or backward infinite-horizon value by a horizon ladder.
    Infinite {
        #[arg(long)]
        problem: String,
        #[arg(long, value_parser = parse_direction)]
        direction: Direction,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long)]
        horizons: Option<String>,
        /// Solve the rungs one after another, each warm-started.
        #[arg(long)]
        warm_start: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Sampled dissipativity certificate over stored trajectories.
    Dissipativity {
        #[arg(long)]
        problem: String,
        /// Glob pattern of trajectory CSV files.
        #[arg(long)]
        trajectories: String,
        /// Check this coefficient instead of fitting the largest one.
        #[arg(long)]
        kappa: Option<f64>,
        /// `zero`, `linear` or an expression in y1..yn.
        #[arg(long, default_value = "linear")]
        storage: String,
        #[arg(long, default_value_t = dissipativity::DEFAULT_RANDOM_WINDOWS)]
        random_windows: usize,
    },
    /// Costate reconstruction and stationarity residuals of a trajectory.
    Pmp {
        #[arg(long)]
        trajectory: PathBuf,
        /// Overrides the problem recorded in the trajectory header.
        #[arg(long)]
        problem: Option<String>,
    },
    /// Residual series r(T) = v(T,x,z) − T·v̄ − v_f(x) − v_b(z).
    Expansion {
        #[arg(long)]
        problem: String,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        #[arg(long)]
        horizons: String,
        /// Skip the witness construction.
        #[arg(long)]
        no_witness: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Continuous-time algebraic Riccati equation.
    Lq {
        #[arg(long = "A", allow_hyphen_values = true)]
        a: String,
        #[arg(long = "B", allow_hyphen_values = true)]
        b: String,
        #[arg(long = "Q", allow_hyphen_values = true)]
        q: String,
        #[arg(long = "R", allow_hyphen_values = true)]
        r: String,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) => match e {
                Error::Precondition(_)
                | Error::Dimension(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Admissibility { .. } => 1,
                _ => 2,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type Outcome = std::result::Result<Report, Failure>;

/// What a subcommand produced: the standard-output document, files to
/// write, and an optional failed check that turns the exit code into 2.
struct Report {
    stdout: String,
    files: Vec<(String, String)>,
    failed_check: Option<String>,
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(f) => {
            eprintln!("error: {}", f.message());
            return f.exit_code();
        }
    };
    let outcome = match &pool {
        Some(pool) => pool.install(|| dispatch(&cli)),
        None => dispatch(&cli),
    };
    let outcome = outcome.and_then(|report| {
        write_files(&cli.output_dir, &report.files)?;
        Ok(report)
    });
    match outcome {
        Ok(report) => {
            print!("{}", report.stdout);
            match report.failed_check {
                Some(msg) => {
                    eprintln!("check failed: {msg}");
                    2
                }
                None => 0,
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>, Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<(), Failure> {
    if files.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(Error::from)?;
    for (name, body) in files {
        fs::write(dir.join(name), body).map_err(Error::from)?;
    }
    Ok(())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "f" | "forward" => Ok(Direction::Forward),
        "b" | "backward" => Ok(Direction::Backward),
        other => Err(format!("expected f or b, got '{other}'")),
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::Usage(format!("{what}: '{c}' is not a finite number")))
        })
        .collect()
}

fn parse_vector(s: &str, what: &str, dim: usize) -> Result<DVector<f64>, Failure> {
    let v = parse_list(s, what)?;
    if v.len() != dim {
        return Err(Failure::Usage(format!("{what} has {} entries, expected {dim}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

/// Rows separated by `;`, entries by `,`.
fn parse_matrix(s: &str, what: &str) -> Result<DMatrix<f64>, Failure> {
    let rows = s
        .split(';')
        .map(|r| parse_list(r, what))
        .collect::<Result<Vec<_>, _>>()?;
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Failure::Usage(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

fn turnpike_of(spec: &ProblemSpec, seed: u64) -> Result<StaticSolution, Failure> {
    let sol = solve_static_multistart(spec, &MultiStart::with_seed(seed))?;
    for w in &sol.warnings {
        eprintln!("warning: {w:?}");
    }
    Ok(sol)
}

fn header(cli: &Cli, subcommand: &str, spec: Option<&ProblemSpec>, config: Option<&SolverConfig>) -> Header {
    let mut h = Header::new(subcommand, cli.seed);
    if let Some(spec) = spec {
        h = h.with("problem", &spec.name);
    }
    if let Some(c) = config {
        h = h
            .with("nlp_tolerance", c.nlp_tolerance)
            .with("endpoint_tolerance", c.endpoint_tolerance)
            .with("intervals_per_unit_time", c.intervals_per_unit_time);
    }
    h
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Static { problem } => cmd_static(cli, problem),
        Command::Solve { problem, horizon, x, z, intervals, solver } => {
            cmd_solve(cli, problem, *horizon, x, z, *intervals, solver)
        }
        Command::Infinite { problem, direction, x, horizons, warm_start, solver } => {
            cmd_infinite(cli, problem, *direction, x, horizons.as_deref(), *warm_start, solver)
        }
        Command::Dissipativity { problem, trajectories, kappa, storage, random_windows } => {
            cmd_dissipativity(cli, problem, trajectories, *kappa, storage, *random_windows)
        }
        Command::Pmp { trajectory, problem } => cmd_pmp(cli, trajectory, problem.as_deref()),
        Command::Expansion { problem, x, z, horizons, no_witness, solver } => {
            cmd_expansion(cli, problem, x, z, horizons, *no_witness, solver)
        }
        Command::Lq { a, b, q, r } => cmd_lq(cli, a, b, q, r),
    }
}

fn cmd_static(cli: &Cli, problem: &str) -> Outcome {
    let spec = load_problem(problem)?;
    let sol = turnpike_of(&spec, cli.seed)?;
    let mut cols = names("y", spec.state_dim);
    cols.extend(names("u", spec.control_dim));
    cols.extend(names("lambda", spec.state_dim));
    cols.extend(["v_bar".into(), "residual".into()]);
    let mut values: Vec<f64> = sol.y_bar.iter().chain(&sol.u_bar).chain(&sol.lambda_bar).copied().collect();
    values.extend([sol.v_bar, sol.kkt_residual]);
    let mut doc = header(cli, "static", Some(&spec), None)
        .with("kkt_tolerance", 1e-10)
        .render();
    let _ = writeln!(doc, "{}\n{}", cols.join(","), format_row(&values));
    Ok(Report {
        files: vec![("static.csv".into(), doc.clone())],
        stdout: doc,
        failed_check: None,
    })
}

fn cmd_solve(
    cli: &Cli,
    problem: &str,
    horizon: f64,
    x: &str,
    z: &str,
    intervals: Option<usize>,
    solver: &SolverArgs,
) -> Outcome {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Failure::Usage(format!("--T must be positive, got {horizon}")));
    }
    let spec = load_problem(problem)?;
    let x = parse_vector(x, "--x", spec.state_dim)?;
    let z = parse_vector(z, "--z", spec.state_dim)?;
    let config = SolverConfig {
        fixed_intervals: intervals,
        ..solver.config()
    };
    config.validate()?;
    let turnpike = turnpike_of(&spec, cli.seed)?;
    let traj = ocp::solve_finite_horizon(&spec, &turnpike, horizon, &x, &z, &config)?;
    let h = header(cli, "solve", Some(&spec), Some(&config)).with("T", format_number(horizon));
    let mut doc = h.render();
    let _ = writeln!(
        doc,
        "T,value,shifted_cost,endpoint_violation\n{}",
        format_row(&[horizon, traj.raw_cost_total, traj.shifted_cost_total, traj.endpoint_violation])
    );
    Ok(Report {
        files: vec![
            ("trajectory.csv".into(), trajectory_to_csv(&h, &traj)),
            ("solve.csv".into(), doc.clone()),
        ],
        stdout: doc,
        failed_check: None,
    })
}

fn cmd_infinite(
    cli: &Cli,
    problem: &str,
    direction: Direction,
    x: &str,
    horizons: Option<&str>,
    warm_start: bool,
    solver: &SolverArgs,
) -> Outcome {
    let spec = load_problem(problem)?;
    let x = parse_vector(x, "--x", spec.state_dim)?;
    let horizons = match horizons {
        Some(h) => parse_list(h, "--horizons")?,
        None => DEFAULT_HORIZONS.to_vec(),
    };
    let config = solver.config();
    config.validate()?;
    let mode = if warm_start { LadderMode::WarmStart } else { LadderMode::Concurrent };
    let turnpike = turnpike_of(&spec, cli.seed)?;
    let est = infinite::estimate(&spec, &turnpike, &x, &horizons, &config, direction, mode)?;
    let decay = infinite::tail_decay_check(&est, &turnpike);
    let h = header(cli, "infinite", Some(&spec), Some(&config))
        .with("direction", direction.tag())
        .with("value", format_number(est.value))
        .with("horizon_used", format_number(est.horizon_used))
        .with("converged", est.converged)
        .with("tail_decay", if decay.pass { "pass" } else { "fail" });
    let mut doc = h.render();
    doc.push_str("T,value\n");
    for (t, v) in &est.estimates_by_horizon {
        let _ = writeln!(doc, "{}", format_row(&[*t, *v]));
    }
    let traj_header = h.clone().with("T", format_number(est.trajectory.horizon()));
    let failed_check = est.warning.clone().or_else(|| {
        (!decay.pass).then(|| "trajectory does not approach the turnpike".to_string())
    });
    Ok(Report {
        files: vec![
            (format!("infinite_{}.csv", direction.tag()), doc.clone()),
            (
                format!("infinite_{}_trajectory.csv", direction.tag()),
                trajectory_to_csv(&traj_header, &est.trajectory),
            ),
        ],
        stdout: doc,
        failed_check,
    })
}

fn storage_from(arg: &str, spec: &ProblemSpec, turnpike: &StaticSolution) -> Result<Storage, Failure> {
    match arg {
        "zero" => Ok(Storage::zero()),
        "linear" => Ok(dissipativity::default_storage(turnpike)),
        expr => {
            let e = Expr::parse(expr, spec.state_dim, 0)?;
            Ok(Storage::user(move |y| e.eval(y)))
        }
    }
}

fn load_trajectories(pattern: &str, spec: &ProblemSpec) -> Result<Vec<Trajectory>, Failure> {
    let paths = glob::glob(pattern).map_err(|e| Failure::Usage(format!("--trajectories: {e}")))?;
    let mut out = Vec::new();
    for path in paths {
        let path = path.map_err(|e| Failure::Core(Error::Io(e.into())))?;
        let text = fs::read_to_string(&path).map_err(Error::from)?;
        let (_, traj) = trajectory_from_csv(&text)
            .map_err(|e| Failure::Core(Error::Parse(format!("{}: {e}", path.display()))))?;
        if traj.states[0].len() != spec.state_dim || traj.controls[0].len() != spec.control_dim {
            return Err(Failure::Core(Error::Dimension(format!(
                "{} does not match the dimensions of {}",
                path.display(),
                spec.name
            ))));
        }
        out.push(traj);
    }
    if out.is_empty() {
        return Err(Failure::Usage(format!("no trajectory files match '{pattern}'")));
    }
    Ok(out)
}

fn cmd_dissipativity(
    cli: &Cli,
    problem: &str,
    pattern: &str,
    kappa: Option<f64>,
    storage: &str,
    random_windows: usize,
) -> Outcome {
    let spec = load_problem(problem)?;
    let turnpike = turnpike_of(&spec, cli.seed)?;
    let storage = storage_from(storage, &spec, &turnpike)?;
    let trajs = load_trajectories(pattern, &spec)?;
    let cert = match kappa {
        Some(k) => {
            if !(k > 0.0) {
                return Err(Failure::Usage(format!("--kappa must be positive, got {k}")));
            }
            dissipativity::check_dissipativity_many(&spec, &turnpike, &storage, k, &trajs, random_windows, cli.seed)
        }
        None => dissipativity::fit_alpha(&spec, &turnpike, &storage, &trajs, random_windows, cli.seed)?.1,
    };
    let mut h = header(cli, "dissipativity", Some(&spec), None)
        .with("certificate", "sampled certificate")
        .with("pass_tolerance", dissipativity::PASS_TOLERANCE)
        .with("random_windows", random_windows);
    if let Some(c) = &cert.caveat {
        h = h.with("caveat", c);
    }
    let mut doc = h.render();
    let _ = writeln!(
        doc,
        "storage,kappa,worst_violation,pass,trajectories,windows\n{},{},{},{},{},{}",
        cert.storage_description,
        format_number(cert.alpha_coefficient),
        format_number(cert.worst_violation),
        if cert.pass { "pass" } else { "fail" },
        cert.trajectories_checked,
        cert.windows_checked
    );
    Ok(Report {
        files: vec![("dissipativity.csv".into(), doc.clone())],
        stdout: doc,
        failed_check: (!cert.pass).then(|| {
            format!("dissipation inequality violated by {}", format_number(cert.worst_violation))
        }),
    })
}

fn cmd_pmp(cli: &Cli, path: &Path, problem: Option<&str>) -> Outcome {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    let (file_header, traj) = trajectory_from_csv(&text)?;
    let problem = problem
        .or_else(|| file_header.get("problem"))
        .ok_or_else(|| Failure::Usage("trajectory header names no problem; pass --problem".into()))?;
    let spec = load_problem(problem)?;
    let turnpike = turnpike_of(&spec, cli.seed)?;
    let check = pmp::check_extremal(&spec, &traj, &turnpike.lambda_bar)?;
    let h = header(cli, "pmp", Some(&spec), None)
        .with("trajectory", path.display())
        .with("interior_margin", pmp::INTERIOR_MARGIN);
    let mut doc = h.render();
    let _ = writeln!(
        doc,
        "stationarity_residual,hamiltonian_drift,boundary_active_fraction\n{}",
        format_row(&[check.stationarity_residual, check.hamiltonian_drift, check.boundary_active_fraction])
    );
    let mut costates = h.render();
    let _ = writeln!(costates, "t,{}", names("lambda", spec.state_dim).join(","));
    for (t, l) in traj.grid.iter().zip(&check.costates) {
        let row: Vec<f64> = std::iter::once(*t).chain(l.iter().copied()).collect();
        let _ = writeln!(costates, "{}", format_row(&row));
    }
    Ok(Report {
        files: vec![("pmp.csv".into(), doc.clone()), ("pmp_costates.csv".into(), costates)],
        stdout: doc,
        failed_check: None,
    })
}

fn optional(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

fn cmd_expansion(
    cli: &Cli,
    problem: &str,
    x: &str,
    z: &str,
    horizons: &str,
    no_witness: bool,
    solver: &SolverArgs,
) -> Outcome {
    let spec = load_problem(problem)?;
    let x = parse_vector(x, "--x", spec.state_dim)?;
    let z = parse_vector(z, "--z", spec.state_dim)?;
    let horizons = parse_list(horizons, "--horizons")?;
    let config = solver.config();
    config.validate()?;
    let turnpike = turnpike_of(&spec, cli.seed)?;
    let options = ExpansionOptions {
        witness: !no_witness,
        ..ExpansionOptions::default()
    };
    let report = expansion::residual_series_with(&spec, &turnpike, &x, &z, &horizons, &config, &options)?;
    let h = header(cli, "expansion", Some(&spec), Some(&config))
        .with("tolerance", format_number(report.tolerance))
        .with("monotone_slack", expansion::MONOTONE_SLACK);
    let mut table = h.render();
    table.push_str(
        "T,value,shifted_cost,residual,midpoint_time,midpoint_distance,witness_cost,witness_endpoint_error,error\n",
    );
    let mut residuals = h.render();
    residuals.push_str("T,r\n");
    let mut files = Vec::new();
    for row in &report.rows {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            format_row(&[row.horizon, row.value, row.shifted_cost, row.residual, row.midpoint_time, row.midpoint_distance]),
            optional(row.witness_cost),
            optional(row.witness_endpoint_error),
            row.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
        let _ = writeln!(residuals, "{}", format_row(&[row.horizon, row.residual]));
        let mut profile = h.clone().with("T", format_number(row.horizon)).render();
        profile.push_str("t,distance\n");
        for (t, d) in &row.distance_profile {
            let _ = writeln!(profile, "{}", format_row(&[*t, *d]));
        }
        files.push((format!("distance_T{}.csv", format_number(row.horizon)), profile));
    }
    let summary = format!(
        "{},{}",
        if report.pass { "pass" } else { "fail" },
        format_row(&[report.v_bar, report.v_f, report.v_b, report.residual_at_max()])
    );
    files.push(("expansion.csv".into(), table));
    files.push(("residuals.csv".into(), residuals));
    let mut stdout = h.render();
    let _ = writeln!(stdout, "status,v_bar,v_f,v_b,r_at_Tmax\n{summary}");
    Ok(Report {
        files,
        stdout,
        failed_check: (!report.pass).then(|| "residual series does not decay".to_string()),
    })
}

fn cmd_lq(cli: &Cli, a: &str, b: &str, q: &str, r: &str) -> Outcome {
    let problem = LqProblem::new(
        parse_matrix(a, "--A")?,
        parse_matrix(b, "--B")?,
        parse_matrix(q, "--Q")?,
        parse_matrix(r, "--R")?,
    )?;
    let sol = lq::solve_are(&problem)?;
    let mut doc = header(cli, "lq", None, None)
        .with("riccati_residual", format_number(sol.residual))
        .with("newton_steps", sol.newton_steps)
        .render();
    let n = problem.state_dim();
    let _ = writeln!(doc, "{}", names("p", n).join(","));
    for i in 0..n {
        let row: Vec<f64> = sol.p.row(i).iter().copied().collect();
        let _ = writeln!(doc, "{}", format_row(&row));
    }
    doc.push_str("# closed-loop eigenvalues\nre,im\n");
    for ev in lq::eigenvalues(&sol.closed_loop) {
        let _ = writeln!(doc, "{}", format_row(&[ev.re, ev.im]));
    }
    Ok(Report {
        files: vec![("lq.csv".into(), doc.clone())],
        stdout: doc,
        failed_check: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_matrices() {
        assert_eq!(parse_list("1, -2.5,3e-1", "v").unwrap(), vec![1.0, -2.5, 0.3]);
        assert!(parse_list("1,,2", "v").is_err());
        assert!(parse_list("nan", "v").is_err());
        let m = parse_matrix("0,1;0,0", "A").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(parse_matrix("1,2;3", "A").is_err());
        assert!(parse_vector("1,2", "x", 1).is_err());
    }

    #[test]
    fn directions() {
        assert_eq!(parse_direction("f"), Ok(Direction::Forward));
        assert_eq!(parse_direction("backward"), Ok(Direction::Backward));
        assert!(parse_direction("up").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Usage("x".into()).exit_code(), 1);
        assert_eq!(Failure::Core(Error::Parse("x".into())).exit_code(), 1);
        assert_eq!(Failure::Core(Error::Unreachable { tau_max: 50.0 }).exit_code(), 2);
        assert_eq!(Failure::Core(Error::Convergence { what: "newton", residual: 1.0 }).exit_code(), 2);
    }
}

//! Command-line front end: load a problem (builtin or JSON file), solve it,
//! verify against the RK45 oracle and write machine-readable results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use serde::Serialize;

use switchtime::nlpsolve::{solve, SolverOptions, Termination};
use switchtime::problem::{Intervals, SwitchedProblem};
use switchtime::schema::ProblemFile;
use switchtime::simulate::{integrate_with, IntegrateOptions};
use switchtime::{benchmarks, sensitivity};

#[derive(Parser, Debug)]
#[command(
    name = "switchtime",
    about = "Optimize switching times for a switched dynamical system"
)]
struct Args {
    /// Bundled problem: unstable-linear | fishing | tank.
    #[arg(long, conflicts_with = "problem")]
    builtin: Option<String>,

    /// Problem definition file (JSON).
    #[arg(long)]
    problem: Option<PathBuf>,

    /// Override the background grid size.
    #[arg(long)]
    n_grid: Option<usize>,

    /// Maximum outer iterations.
    #[arg(long)]
    max_iter: Option<usize>,

    /// First-order optimality tolerance.
    #[arg(long)]
    tol: Option<f64>,

    /// Output directory for report.json and trajectory.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Run one solve per listed grid size and write sweep.csv instead.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,

    /// JSON file with the initial interval durations.
    #[arg(long)]
    seed_delta: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    problem: String,
    n_grid: usize,
    delta_star: Vec<f64>,
    tau_star: Vec<f64>,
    j_final: f64,
    j_oracle: Option<f64>,
    linearization_gap: Option<f64>,
    j_history: Vec<f64>,
    n_cost_evaluations: usize,
    wall_time_s: f64,
    termination: Termination,
    optimality: f64,
}

struct Loaded {
    name: String,
    file: ProblemFile,
    options: SolverOptions,
}

fn load(args: &Args) -> Result<Loaded> {
    let (name, mut file, mut options) = match (&args.builtin, &args.problem) {
        (Some(name), None) => {
            let file = benchmarks::builtin(name)
                .ok_or_else(|| anyhow!("unknown builtin '{name}' (expected unstable-linear, fishing or tank)"))?;
            (name.clone(), file, benchmarks::builtin_solver_options(name))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading problem file {}", path.display()))?;
            let file = ProblemFile::from_json_str(&text)
                .with_context(|| format!("parsing problem file {}", path.display()))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "problem".into());
            (name, file, SolverOptions::default())
        }
        _ => bail!("exactly one of --builtin or --problem is required"),
    };

    if let Some(n_grid) = args.n_grid {
        file.n_grid = n_grid;
    }
    if let Some(max_iter) = args.max_iter {
        options.max_iter = max_iter;
    }
    if let Some(tol) = args.tol {
        options.tol = tol;
    }
    Ok(Loaded {
        name,
        file,
        options,
    })
}

fn seed_delta(path: &Path, problem: &SwitchedProblem) -> Result<Intervals> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading seed file {}", path.display()))?;
    let raw: Vec<f64> =
        serde_json::from_str(&text).with_context(|| format!("parsing seed file {}", path.display()))?;
    if raw.len() != problem.n_intervals() {
        bail!(
            "seed delta has {} entries, problem has {} intervals",
            raw.len(),
            problem.n_intervals()
        );
    }
    switchtime::project_to_delta(&nalgebra_vec(&raw), problem).map_err(Into::into)
}

fn nalgebra_vec(v: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(v)
}

fn write_trajectory(
    path: &Path,
    problem: &SwitchedProblem,
    delta: &Intervals,
) -> Result<()> {
    // Cap the step so the export carries at least ~500 rows.
    let traj = integrate_with(
        problem,
        delta,
        IntegrateOptions {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: Some(problem.horizon() / 512.0),
        },
    )?;
    let n = problem.state_dim();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    out.push_str(",mode,running_cost\n");
    for k in 0..traj.times.len() {
        out.push_str(&format!("{:.12e}", traj.times[k]));
        for i in 0..n {
            out.push_str(&format!(",{:.12e}", traj.states[k][i]));
        }
        out.push_str(&format!(",{},{:.12e}\n", traj.modes[k], traj.running_cost[k]));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_single(loaded: &Loaded, args: &Args) -> Result<Termination> {
    let problem = loaded.file.to_problem()?;
    let delta0 = match &args.seed_delta {
        Some(path) => Some(seed_delta(path, &problem)?),
        None => None,
    };
    let report = solve(&problem, delta0.as_ref(), &loaded.options)?;

    let gap = report.j_oracle.map(|oracle| {
        if oracle.abs() < 1e-300 {
            (oracle - report.j_final).abs()
        } else {
            (oracle - report.j_final).abs() / oracle.abs()
        }
    });

    let out = Report {
        problem: loaded.name.clone(),
        n_grid: loaded.file.n_grid,
        delta_star: report.delta_star.delta().iter().cloned().collect(),
        tau_star: report.tau_star.clone(),
        j_final: report.j_final,
        j_oracle: report.j_oracle,
        linearization_gap: gap,
        j_history: report.j_history.clone(),
        n_cost_evaluations: report.n_cost_evaluations,
        wall_time_s: report.wall_time.as_secs_f64(),
        termination: report.termination,
        optimality: report.optimality,
    };

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let report_path = args.out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&out)?)
        .with_context(|| format!("writing {}", report_path.display()))?;

    if report.termination != Termination::Overflow {
        write_trajectory(&args.out.join("trajectory.csv"), &problem, &report.delta_star)?;
    }

    println!(
        "{}: J = {:.6}{} after {} evaluations in {:.3} s ({:?})",
        loaded.name,
        out.j_final,
        out.j_oracle
            .map(|j| format!(" (oracle {j:.6})"))
            .unwrap_or_default(),
        out.n_cost_evaluations,
        out.wall_time_s,
        report.termination
    );
    for (i, tau) in out.tau_star.iter().enumerate() {
        println!("  tau_{} = {:.4}", i + 1, tau);
    }
    Ok(report.termination)
}

fn run_sweep(loaded: &Loaded, args: &Args, sizes: &[usize]) -> Result<Termination> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let mut rows = String::from("n_grid,j_oracle,j_linearized,delta_j_percent,n_j_eval,time_s\n");
    let mut worst = Termination::Converged;
    for &n_grid in sizes {
        let mut file = loaded.file.clone();
        file.n_grid = n_grid;
        let problem = file.to_problem()?;
        let start = Instant::now();
        let report = solve(&problem, None, &loaded.options)?;
        let elapsed = start.elapsed().as_secs_f64();
        if matches!(
            report.termination,
            Termination::Overflow | Termination::LineSearchFailure
        ) {
            worst = report.termination;
        }
        let j_lin = sensitivity::evaluate(&problem, &report.delta_star)?.j;
        let oracle = report
            .j_oracle
            .ok_or_else(|| anyhow!("oracle integration failed at n_grid = {n_grid}"))?;
        let gap_percent = 100.0 * (oracle - j_lin).abs() / oracle.abs().max(1e-300);
        rows.push_str(&format!(
            "{n_grid},{oracle:.6e},{j_lin:.6e},{gap_percent:.6e},{},{elapsed:.6e}\n",
            report.n_cost_evaluations
        ));
        println!(
            "n_grid = {n_grid}: J_oracle = {oracle:.6}, J_lin = {j_lin:.6}, gap = {gap_percent:.4}%"
        );
    }
    let path = args.out.join("sweep.csv");
    fs::write(&path, rows).with_context(|| format!("writing {}", path.display()))?;
    Ok(worst)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let loaded = match load(&args) {
        Ok(l) => l,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &args.sweep {
        Some(sizes) if !sizes.is_empty() => run_sweep(&loaded, &args, sizes),
        _ => run_single(&loaded, &args),
    };
    match outcome {
        Ok(Termination::Converged) | Ok(Termination::MaxIter) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

//! `dne` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasibility finding,
//! 3 solver failure.

pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dne_core::ded::{solve_ded, DedError};
use dne_core::feasibility::{
    check_scenario, find_violating_trajectory, CheckOptions, FeasibilityError, SearchOptions,
    WindTrajectory,
};
use dne_core::formulation::QsuSelection;
use dne_core::nccg::{prepare, solve_prepared, DneSolution, NccgError, SolverConfig};
use dne_core::system::{load_case, SystemCase, UnitId};
use log::{info, warn};

use report::{limits, plot_csv, PlotKind, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dne",
    version,
    about = "Do-not-exceed limits for wind output with quick-start recourse"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Multi-period limits over the whole horizon.
    Solve(SolveArgs),
    /// Dispatch and prices at forecast wind.
    Ded(CaseArgs),
    /// Limits for each period on its own.
    Single(SolveArgs),
    /// Checks one wind trajectory for a feasible corrective dispatch.
    Check {
        #[command(flatten)]
        common: SolveArgs,
        /// CSV with header `period,farm,mw`.
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Multi-period and single-period limits side by side, with a
    /// trajectory inside the latter but outside the former.
    Compare(SolveArgs),
    /// Rebuilds band CSVs from result files.
    Plot {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "bands")]
        kind: PlotKind,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CaseArgs {
    case: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Truncate the horizon to the first `n` periods.
    #[arg(long)]
    periods: Option<usize>,
    /// Label used in plot files; defaults to the case file stem.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// JSON solver configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Quick-start units allowed to change commitment: `all`, `none` or a
    /// comma-separated list of unit ids.
    #[arg(long, value_parser = parse_qsus)]
    enable_qsu: Option<QsuSelection>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write one JSON line per outer iteration to stderr.
    #[arg(long)]
    log_iterations: bool,
}

fn parse_qsus(s: &str) -> Result<QsuSelection, String> {
    match s {
        "all" => Ok(QsuSelection::All),
        "none" => Ok(QsuSelection::None),
        ids => ids
            .split(',')
            .map(|id| {
                id.trim()
                    .parse::<u32>()
                    .map(UnitId)
                    .map_err(|_| format!("bad unit id `{id}`"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(QsuSelection::Ids),
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<NccgError> for Failure {
    fn from(e: NccgError) -> Self {
        let code = match &e {
            _ if e.is_infeasibility() => EXIT_INFEASIBLE,
            NccgError::Case(_) | NccgError::Formulation(_) | NccgError::InvalidConfig(_) => {
                EXIT_USAGE
            }
            NccgError::Ded(DedError::Case(_)) => EXIT_USAGE,
            _ => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DedError> for Failure {
    fn from(e: DedError) -> Self {
        NccgError::from(e).into()
    }
}

impl From<FeasibilityError> for Failure {
    fn from(e: FeasibilityError) -> Self {
        match e {
            FeasibilityError::Nccg(inner) => inner.into(),
            FeasibilityError::Case(_)
            | FeasibilityError::Formulation(_)
            | FeasibilityError::Trajectory(_) => Self::usage(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Solve(args) => solve(&args),
        Command::Single(args) => single(&args),
        Command::Ded(args) => ded(&args),
        Command::Check { common, trajectory } => check(&common, &trajectory),
        Command::Compare(args) => compare(&args),
        Command::Plot {
            results,
            kind,
            output,
        } => plot(&results, kind, output.as_deref()),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load(args: &CaseArgs) -> Result<SystemCase, Failure> {
    let case = load_case(&read(&args.case)?)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.case.display())))?;
    match args.periods {
        Some(n) => case.truncated(n).map_err(|e| Failure::usage(e.to_string())),
        None => Ok(case),
    }
}

fn label(args: &CaseArgs) -> String {
    args.label.clone().unwrap_or_else(|| {
        args.case
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".into())
    })
}

fn config(args: &SolveArgs) -> Result<SolverConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<SolverConfig>(&read(path)?)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?,
        None => SolverConfig::default(),
    };
    if let Some(q) = &args.enable_qsu {
        cfg.recourse_qsus = q.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Writes the report JSON to `-o` or stdout, and the plot CSV beside it.
fn emit(
    output: Option<&Path>,
    report: &Report,
    plot: Option<(PlotKind, &str)>,
) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Failure {
        code: EXIT_SOLVER,
        message: e.to_string(),
    })?;
    match output {
        Some(path) => {
            write(path, &format!("{json}\n"))?;
            if let Some((kind, suffix)) = plot {
                let csv = plot_csv(std::slice::from_ref(report), kind).map_err(Failure::usage)?;
                write(&path.with_extension(suffix), &csv)?;
            }
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn log_iterations(args: &SolveArgs, solutions: &[&DneSolution]) {
    if !args.log_iterations {
        return;
    }
    for sol in solutions {
        for rec in &sol.iterations {
            let mut line = serde_json::to_value(rec).expect("plain record");
            line["periods"] =
                serde_json::json!(sol.periods.iter().map(|t| t + 1).collect::<Vec<_>>());
            eprintln!("{line}");
        }
    }
}

fn audit_code(solutions: &[&DneSolution]) -> i32 {
    let mut code = EXIT_OK;
    for sol in solutions {
        if !sol.audit.passed() {
            warn!(
                "audit failed for periods {:?}: vertex violation {:.3e}, sample violation {:.3e}",
                sol.periods, sol.audit.max_vertex_violation, sol.audit.max_sample_violation
            );
            code = EXIT_SOLVER;
        }
    }
    code
}

fn solve(args: &SolveArgs) -> Result<i32, Failure> {
    let case = load(&args.case)?;
    let cfg = config(args)?;
    let prepared = prepare(&case, &cfg)?;
    let sol = solve_prepared(&case, &prepared, None, &cfg)?;
    info!(
        "objective {:.6} after {} iterations",
        sol.objective,
        sol.iterations.len()
    );
    log_iterations(args, &[&sol]);
    let code = audit_code(&[&sol]);
    let report = Report::Solve {
        case_label: label(&args.case),
        qsu: cfg.recourse_qsus.label(),
        objective: sol.objective,
        limits: limits(&[&sol]),
        solution: sol,
    };
    emit(
        args.case.output.as_deref(),
        &report,
        Some((PlotKind::Bands, "bands.csv")),
    )?;
    Ok(code)
}

fn singles(
    case: &SystemCase,
    cfg: &SolverConfig,
) -> Result<(Vec<DneSolution>, dne_core::nccg::Prepared), Failure> {
    let prepared = prepare(case, cfg)?;
    let sols = (0..case.n_periods())
        .map(|t| solve_prepared(case, &prepared, Some(t), cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((sols, prepared))
}

fn single(args: &SolveArgs) -> Result<i32, Failure> {
    let case = load(&args.case)?;
    let cfg = config(args)?;
    let (sols, _) = singles(&case, &cfg)?;
    let refs: Vec<&DneSolution> = sols.iter().collect();
    log_iterations(args, &refs);
    let code = audit_code(&refs);
    let report = Report::Single {
        case_label: label(&args.case),
        qsu: cfg.recourse_qsus.label(),
        limits: limits(&refs),
        solutions: sols,
    };
    emit(
        args.case.output.as_deref(),
        &report,
        Some((PlotKind::Bands, "bands.csv")),
    )?;
    Ok(code)
}

fn ded(args: &CaseArgs) -> Result<i32, Failure> {
    let case = load(args)?;
    let dispatch = solve_ded(&case)?;
    emit(
        args.output.as_deref(),
        &Report::Ded {
            case_label: label(args),
            dispatch,
        },
        None,
    )?;
    Ok(EXIT_OK)
}

fn check(args: &SolveArgs, trajectory: &Path) -> Result<i32, Failure> {
    let case = load(&args.case)?;
    let cfg = config(args)?;
    let traj = WindTrajectory::from_csv(&case, &read(trajectory)?)
        .map_err(|e| Failure::usage(format!("{}: {e}", trajectory.display())))?;
    let ddp = solve_ded(&case)?.ddp;
    let options = CheckOptions {
        recourse_qsus: cfg.recourse_qsus.clone(),
        eps_feas: cfg.eps_feas,
        milp: cfg.milp,
    };
    let result = check_scenario(&case, &ddp, &traj, &options)?;
    if result.feasible {
        eprintln!("trajectory admits a feasible corrective dispatch");
    } else {
        eprintln!(
            "trajectory is infeasible: total violation {:.6} MW",
            result.total_slack
        );
        for v in &result.violations {
            eprintln!("  {} {:.6} MW", v.row, v.mw);
        }
    }
    let code = if result.feasible {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    };
    let report = Report::Check {
        case_label: label(&args.case),
        qsu: cfg.recourse_qsus.label(),
        check: result,
    };
    emit(args.case.output.as_deref(), &report, None)?;
    Ok(code)
}

fn compare(args: &SolveArgs) -> Result<i32, Failure> {
    let case = load(&args.case)?;
    let cfg = config(args)?;
    let (sols, prepared) = singles(&case, &cfg)?;
    let multi = solve_prepared(&case, &prepared, None, &cfg)?;
    let mut all: Vec<&DneSolution> = vec![&multi];
    all.extend(sols.iter());
    log_iterations(args, &all);
    let code = audit_code(&all);

    let search = SearchOptions {
        check: CheckOptions {
            recourse_qsus: cfg.recourse_qsus.clone(),
            eps_feas: cfg.eps_feas,
            milp: cfg.milp,
        },
        seed: cfg.seed,
        ..SearchOptions::default()
    };
    let found = find_violating_trajectory(&case, &prepared.ded.ddp, &sols, &multi, &search)?;
    match &found {
        Some(v) if !v.check.feasible => {
            info!(
                "trajectory outside the multi-period box is infeasible ({:.6} MW)",
                v.check.total_slack
            )
        }
        Some(_) => info!("trajectory outside the multi-period box found; it is feasible"),
        None => info!("single-period boxes add nothing outside the multi-period box"),
    }
    if let (Some(path), Some(v)) = (args.case.output.as_deref(), &found) {
        write(
            &path.with_extension("trajectory.csv"),
            &v.trajectory.to_csv(),
        )?;
    }
    let report = Report::Compare {
        case_label: label(&args.case),
        qsu: cfg.recourse_qsus.label(),
        multi,
        singles: sols,
        trajectory: found,
    };
    emit(
        args.case.output.as_deref(),
        &report,
        Some((PlotKind::Comparison, "comparison.csv")),
    )?;
    Ok(code)
}

fn plot(results: &[PathBuf], kind: PlotKind, output: Option<&Path>) -> Result<i32, Failure> {
    let reports = results
        .iter()
        .map(|p| {
            serde_json::from_str::<Report>(&read(p)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let csv = plot_csv(&reports, kind).map_err(Failure::usage)?;
    match output {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

//! Benchmark runner: picks a problem and a solver set, runs them under a
//! shared g-evaluation budget, and writes per-solver traces (CSV plus a
//! JSON mirror) and a summary JSON with g-evaluations-to-tolerance.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use serde::Serialize;

use aap::diagnostics::{DiagnosticsRecord, JacobianAccess};
use aap::fixedpoint::{
    run_aa, run_aap_observed, run_newton_gmres, run_picard, run_res_aa, FixedPointMap,
    SolveReport, SolveStatus, SolverConfig,
};
use aap::ingest::rng::Rng;
use aap::ingest::{
    generate_gaussian_affine, parse_libsvm, write_trace_csv, write_trace_json, LibsvmOptions,
    TraceRow,
};
use aap::problems::{
    affine_map, logistic_gd_map, make_synthetic_logistic, make_synthetic_nmf, nmf_annls_map,
    quadratic_map, LogisticDataset,
};

#[derive(Parser)]
#[command(name = "aap-cli", version, about = "Fixed-point solver benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected solvers once (or over seeded repeats).
    Run(RunArgs),
    /// Run over several window sizes m and emit a combined trace.
    SweepM(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProblemKind {
    Affine,
    Logistic,
    Nmf,
    Quadratic,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Problem family to solve.
    #[arg(long, value_enum)]
    problem: ProblemKind,
    /// Comma-separated subset of picard,aa,resaa,aap,newton_gmres.
    #[arg(long, default_value = "picard,aap")]
    solvers: String,
    /// Secant window size (AAP sweep length).
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Mixing damping factor.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Residual tolerance; relative to the initial residual by default.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Interpret --tol as an absolute residual norm.
    #[arg(long)]
    absolute_tol: bool,
    /// Budget of g evaluations per solver run.
    #[arg(long, default_value_t = 1000)]
    max_gevals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach per-iteration diagnostics to AAP trace rows.
    #[arg(long)]
    diagnostics: bool,
    #[arg(long, default_value = "traces")]
    out_dir: PathBuf,
    /// Dimension for affine and quadratic problems.
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Spectral norm of the generated affine map.
    #[arg(long, default_value_t = 0.9)]
    norm: f64,
    /// Sample count for the synthetic logistic problem.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Logistic l2 regularization strength.
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    /// Logistic gradient step size.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// LIBSVM file for the logistic problem (synthetic when absent).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Subsample this many rows from --data (seeded shuffle).
    #[arg(long)]
    subsample: Option<usize>,
    /// Raw label mapped to +1; everything else maps to -1.
    #[arg(long)]
    binary_positive: Option<f64>,
    #[arg(long, default_value_t = 300)]
    d1: usize,
    #[arg(long, default_value_t = 50)]
    d2: usize,
    /// NMF factorization rank.
    #[arg(long, default_value_t = 4)]
    r: usize,
    /// Quadratic map nonlinearity scale.
    #[arg(long, default_value_t = 0.2)]
    scale: f64,
    /// Seeded repetitions (seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Window sizes to sweep, e.g. 1,3,7.
    #[arg(long, value_delimiter = ',', required = true)]
    m_values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Solver {
    Picard,
    Aa,
    ResAa,
    Aap,
    NewtonGmres,
}

impl Solver {
    fn name(self) -> &'static str {
        match self {
            Solver::Picard => "picard",
            Solver::Aa => "aa",
            Solver::ResAa => "resaa",
            Solver::Aap => "aap",
            Solver::NewtonGmres => "newton_gmres",
        }
    }
}

fn parse_solvers(s: &str) -> Result<Vec<Solver>, String> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let solver = match tok {
            "picard" => Solver::Picard,
            "aa" => Solver::Aa,
            "resaa" => Solver::ResAa,
            "aap" => Solver::Aap,
            "newton_gmres" | "newton-gmres" => Solver::NewtonGmres,
            other => return Err(format!("unknown solver '{other}'")),
        };
        if !out.contains(&solver) {
            out.push(solver);
        }
    }
    if out.is_empty() {
        return Err("at least one solver is required".into());
    }
    Ok(out)
}

fn validate(args: &RunArgs) -> Result<(), String> {
    if args.m < 1 {
        return Err("--m must be at least 1".into());
    }
    if !(args.tol > 0.0) {
        return Err("--tol must be positive".into());
    }
    if args.repeats < 1 {
        return Err("--repeats must be at least 1".into());
    }
    if args.beta < 0.0 {
        return Err("--beta must be nonnegative".into());
    }
    Ok(())
}

fn build_problem(
    args: &RunArgs,
    data: Option<&LogisticDataset>,
    seed: u64,
) -> Result<(Box<dyn FixedPointMap>, Array1<f64>), String> {
    match args.problem {
        ProblemKind::Affine => {
            let (a, b) = generate_gaussian_affine(args.d, args.norm, seed);
            let map = affine_map(a, b).map_err(|e| e.to_string())?;
            let x0 = Array1::zeros(args.d);
            Ok((Box::new(map), x0))
        }
        ProblemKind::Logistic => {
            let dataset = match data {
                Some(full) => match args.subsample {
                    Some(k) if k < full.n() => {
                        let mut idx: Vec<usize> = (0..full.n()).collect();
                        let mut rng = Rng::from_seed(seed);
                        for i in (1..idx.len()).rev() {
                            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                            idx.swap(i, j);
                        }
                        idx.truncate(k);
                        idx.sort_unstable();
                        full.subset(&idx).map_err(|e| e.to_string())?
                    }
                    _ => full.clone(),
                },
                None => make_synthetic_logistic(args.n, args.d, seed),
            };
            let d = dataset.d();
            let map = logistic_gd_map(dataset, args.mu, args.eta).map_err(|e| e.to_string())?;
            Ok((Box::new(map), Array1::zeros(d)))
        }
        ProblemKind::Nmf => {
            let a = make_synthetic_nmf(args.d1, args.d2, args.r, seed);
            let map = nmf_annls_map(a, args.r).map_err(|e| e.to_string())?;
            let dim = map.dimension();
            let mut rng = Rng::from_seed(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
            let x0 = Array1::from_iter((0..dim).map(|_| 0.1 + 0.9 * rng.next_f64()));
            Ok((Box::new(map), x0))
        }
        ProblemKind::Quadratic => {
            let mut rng = Rng::from_seed(seed);
            let c = Array1::from_iter((0..args.d).map(|_| 0.1 * rng.next_gaussian()));
            let map = quadratic_map(c, args.scale).map_err(|e| e.to_string())?;
            let x0 = Array1::from_iter((0..args.d).map(|_| 0.3 * rng.next_gaussian()));
            Ok((Box::new(map), x0))
        }
    }
}

fn solver_config(args: &RunArgs) -> SolverConfig {
    let mut cfg = SolverConfig::new(args.m);
    cfg.beta = aap::fixedpoint::DampingSchedule::Constant(args.beta);
    cfg.tol = args.tol;
    cfg.relative_tol = !args.absolute_tol;
    cfg.max_g_evals = Some(args.max_gevals);
    // Generous iteration cap; the g-evaluation budget is the real limit.
    cfg.max_global_iters = args.max_gevals.max(1);
    cfg
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIters => "max_iters",
        SolveStatus::NumericalBreakdown => "breakdown",
    }
}

fn trace_rows(
    solver_label: &str,
    report: &SolveReport,
    diags: &[DiagnosticsRecord],
) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    let mut prev_gevals = 0usize;
    for rec in &report.records {
        for (l, &rn) in rec.sweep_residual_norms.iter().enumerate() {
            rows.push(TraceRow {
                solver: solver_label.to_string(),
                t: rec.t,
                picard_substep: l as i64,
                g_evals: (prev_gevals + l + 1).min(rec.g_evals_cumulative),
                residual_norm: rn,
                theta: None,
                diagnostics: None,
            });
        }
        rows.push(TraceRow {
            solver: solver_label.to_string(),
            t: rec.t,
            picard_substep: -1,
            g_evals: rec.g_evals_cumulative,
            residual_norm: rec.residual_norm,
            theta: rec.theta,
            diagnostics: diags.iter().find(|d| d.t == rec.t).cloned(),
        });
        prev_gevals = rec.g_evals_cumulative;
    }
    rows
}

#[derive(Serialize)]
struct RunOutcome {
    seed: u64,
    status: &'static str,
    g_evals: usize,
    final_residual_norm: f64,
    /// First cumulative g-evaluation count at which the residual reached
    /// the tolerance target; null when never reached.
    g_evals_to_tol: Option<usize>,
    trace_csv: String,
    trace_json: String,
}

#[derive(Serialize)]
struct QuartileSummary {
    median: f64,
    q1: f64,
    q3: f64,
    iqr: f64,
    successes: usize,
}

#[derive(Serialize)]
struct SolverSummary {
    runs: Vec<RunOutcome>,
    g_evals_to_tol: Option<QuartileSummary>,
}

#[derive(Serialize)]
struct Summary {
    problem: String,
    m: usize,
    beta: f64,
    tol: f64,
    relative_tol: bool,
    max_gevals: usize,
    seed: u64,
    repeats: usize,
    solvers: BTreeMap<String, SolverSummary>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p * (n as f64 - 1.0);
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn quartiles(values: &[usize]) -> Option<QuartileSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let q1 = percentile(&v, 0.25);
    let q3 = percentile(&v, 0.75);
    Some(QuartileSummary {
        median: percentile(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        successes: values.len(),
    })
}

struct SeedResult {
    seed: u64,
    solver: Solver,
    rows: Vec<TraceRow>,
    status: SolveStatus,
    g_evals: usize,
    final_residual_norm: f64,
    g_evals_to_tol: Option<usize>,
}

fn run_one(
    solver: Solver,
    label: &str,
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
    diagnostics: bool,
) -> Result<(Vec<TraceRow>, SolveReport), String> {
    let mut diags: Vec<DiagnosticsRecord> = Vec::new();
    let report = match solver {
        Solver::Picard => run_picard(map, x0, cfg),
        Solver::Aa => run_aa(map, x0, cfg),
        Solver::ResAa => run_res_aa(map, x0, cfg),
        Solver::NewtonGmres => run_newton_gmres(map, x0, cfg),
        Solver::Aap => {
            let jac = JacobianAccess::for_map(map, cfg.jvp_fd_step.max(1e-6));
            run_aap_observed(map, x0, cfg, |step| {
                if diagnostics {
                    if let Ok(d) = DiagnosticsRecord::compute(
                        step.t,
                        step.x_t,
                        step.history,
                        &jac,
                        map.gamma(),
                    ) {
                        diags.push(d);
                    }
                }
            })
        }
    }
    .map_err(|e| format!("{label}: {e}"))?;
    Ok((trace_rows(label, &report, &diags), report))
}

fn tolerance_target(args: &RunArgs, report: &SolveReport) -> f64 {
    if args.absolute_tol {
        args.tol
    } else {
        let f0 = report
            .records
            .first()
            .map(|r| r.residual_norm)
            .unwrap_or(0.0);
        args.tol * f0
    }
}

fn gevals_to_tol(rows: &[TraceRow], target: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.residual_norm <= target)
        .map(|r| r.g_evals)
        .min()
}

fn worker_count(repeats: usize) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("AAP_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(hw);
    cap.min(repeats).max(1)
}

/// Runs every (seed, solver) pair, distributing seeds over a worker
/// pool; results come back in deterministic (seed, solver) order.
fn execute(
    args: &RunArgs,
    solvers: &[Solver],
    m_override: Option<usize>,
    label_suffix: &str,
) -> Result<Vec<SeedResult>, String> {
    let mut args = args.clone();
    if let Some(m) = m_override {
        args.m = m;
    }
    let cfg = solver_config(&args);
    cfg.validate_for_cli().map_err(|e| e.to_string())?;

    let dataset = match (&args.problem, &args.data) {
        (ProblemKind::Logistic, Some(path)) => {
            let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let opts = LibsvmOptions {
                binary_positive: args.binary_positive,
                d_override: None,
            };
            Some(parse_libsvm(std::io::BufReader::new(file), &opts).map_err(|e| e.to_string())?)
        }
        _ => None,
    };

    let seeds: Vec<u64> = (0..args.repeats as u64).map(|i| args.seed + i).collect();
    let results = Mutex::new(Vec::<SeedResult>::new());
    let errors = Mutex::new(Vec::<String>::new());
    let workers = worker_count(seeds.len());

    std::thread::scope(|scope| {
        for w in 0..workers {
            let seeds = &seeds;
            let args = &args;
            let cfg = &cfg;
            let dataset = dataset.as_ref();
            let results = &results;
            let errors = &errors;
            scope.spawn(move || {
                for (i, &seed) in seeds.iter().enumerate() {
                    if i % workers != w {
                        continue;
                    }
                    let built = build_problem(args, dataset, seed);
                    let (map, x0) = match built {
                        Ok(v) => v,
                        Err(e) => {
                            errors.lock().unwrap().push(e);
                            return;
                        }
                    };
                    for &solver in solvers {
                        let label = format!("{}{}", solver.name(), label_suffix);
                        match run_one(solver, &label, map.as_ref(), &x0, cfg, args.diagnostics)
                        {
                            Ok((rows, report)) => {
                                let target = tolerance_target(args, &report);
                                let to_tol = gevals_to_tol(&rows, target);
                                results.lock().unwrap().push(SeedResult {
                                    seed,
                                    solver,
                                    rows,
                                    status: report.status,
                                    g_evals: report.g_evals,
                                    final_residual_norm: report.final_residual_norm,
                                    g_evals_to_tol: to_tol,
                                });
                            }
                            Err(e) => errors.lock().unwrap().push(e),
                        }
                    }
                }
            });
        }
    });

    let errors = errors.into_inner().unwrap();
    if let Some(e) = errors.into_iter().next() {
        return Err(e);
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|r| {
        (
            r.seed,
            solvers.iter().position(|&s| s == r.solver).unwrap_or(0),
        )
    });
    Ok(results)
}

trait CliValidate {
    fn validate_for_cli(&self) -> Result<(), aap::fixedpoint::FixedPointError>;
}

impl CliValidate for SolverConfig {
    fn validate_for_cli(&self) -> Result<(), aap::fixedpoint::FixedPointError> {
        // Window-vs-dimension limits are checked per problem inside the
        // solvers; only parameter sanity is checked up front here.
        if self.m < 1 || !(self.tol > 0.0) {
            return Err(aap::fixedpoint::FixedPointError::InvalidConfig(
                "m must be >= 1 and tol positive".into(),
            ));
        }
        Ok(())
    }
}

fn write_outputs(
    args: &RunArgs,
    results: &[SeedResult],
    solvers: &[Solver],
) -> Result<Summary, String> {
    fs::create_dir_all(&args.out_dir).map_err(|e| e.to_string())?;
    let mut summary = Summary {
        problem: format!("{:?}", args.problem).to_lowercase(),
        m: args.m,
        beta: args.beta,
        tol: args.tol,
        relative_tol: !args.absolute_tol,
        max_gevals: args.max_gevals,
        seed: args.seed,
        repeats: args.repeats,
        solvers: BTreeMap::new(),
    };
    for &solver in solvers {
        let mut runs = Vec::new();
        let mut to_tols = Vec::new();
        for r in results.iter().filter(|r| r.solver == solver) {
            let suffix = if args.repeats > 1 {
                format!("_seed{}", r.seed)
            } else {
                String::new()
            };
            let csv_name = format!("{}{}.csv", solver.name(), suffix);
            let json_name = format!("{}{}.json", solver.name(), suffix);
            write_trace_csv(&r.rows, &args.out_dir.join(&csv_name))
                .map_err(|e| e.to_string())?;
            write_trace_json(&r.rows, &args.out_dir.join(&json_name))
                .map_err(|e| e.to_string())?;
            if let Some(v) = r.g_evals_to_tol {
                to_tols.push(v);
            }
            runs.push(RunOutcome {
                seed: r.seed,
                status: status_name(r.status),
                g_evals: r.g_evals,
                final_residual_norm: r.final_residual_norm,
                g_evals_to_tol: r.g_evals_to_tol,
                trace_csv: csv_name,
                trace_json: json_name,
            });
        }
        summary.solvers.insert(
            solver.name().to_string(),
            SolverSummary {
                runs,
                g_evals_to_tol: quartiles(&to_tols),
            },
        );
    }
    let text = serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?;
    fs::write(args.out_dir.join("summary.json"), text + "\n").map_err(|e| e.to_string())?;
    Ok(summary)
}

fn cmd_run(args: &RunArgs) -> Result<(), String> {
    validate(args)?;
    let solvers = parse_solvers(&args.solvers)?;
    let results = execute(args, &solvers, None, "")?;
    let summary = write_outputs(args, &results, &solvers)?;
    for (name, s) in &summary.solvers {
        for run in &s.runs {
            eprintln!(
                "{name} seed={} status={} g_evals={} final_residual={:.3e} to_tol={:?}",
                run.seed, run.status, run.g_evals, run.final_residual_norm, run.g_evals_to_tol
            );
        }
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), String> {
    validate(&args.run)?;
    let solvers = parse_solvers(&args.run.solvers)?;
    let mut ms = Vec::new();
    for &m in &args.m_values {
        if m < 1 {
            return Err("--m-values entries must be at least 1".into());
        }
        if ms.contains(&m) {
            eprintln!("warning: duplicate m value {m} ignored");
        } else {
            ms.push(m);
        }
    }
    if ms.is_empty() {
        return Err("--m-values must contain at least one value".into());
    }

    fs::create_dir_all(&args.run.out_dir).map_err(|e| e.to_string())?;
    let mut all_rows = Vec::new();
    let mut per_m = BTreeMap::new();
    for &m in &ms {
        let results = execute(&args.run, &solvers, Some(m), &format!("_m{m}"))?;
        for r in &results {
            all_rows.extend(r.rows.iter().cloned());
        }
        let mut m_args = args.run.clone();
        m_args.m = m;
        let mut solver_map = BTreeMap::new();
        for &solver in &solvers {
            let to_tols: Vec<usize> = results
                .iter()
                .filter(|r| r.solver == solver)
                .filter_map(|r| r.g_evals_to_tol)
                .collect();
            solver_map.insert(
                solver.name().to_string(),
                quartiles(&to_tols),
            );
        }
        per_m.insert(m.to_string(), solver_map);
    }
    write_trace_csv(&all_rows, &args.run.out_dir.join("sweep_m.csv"))
        .map_err(|e| e.to_string())?;
    write_trace_json(&all_rows, &args.run.out_dir.join("sweep_m.json"))
        .map_err(|e| e.to_string())?;
    let text = serde_json::to_string_pretty(&per_m).map_err(|e| e.to_string())?;
    fs::write(args.run.out_dir.join("sweep_summary.json"), text + "\n")
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SweepM(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
    }
}

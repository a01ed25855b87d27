//! Command-line driver: solve BAL problems with either backend, compute
//! performance profiles from recorded traces, check the algebraic
//! equivalence of the two marginalization paths, and generate synthetic
//! benchmark problems.
//!
//! Exit codes: 0 on success, 1 when some solver cells failed but others
//! produced output, 2 on configuration errors.

use clap::{Args, Parser, Subcommand};
use srba::bal::{load_bal, preprocess, write_bal, PreprocessOptions, ProblemSummary};
use srba::eval::{
    alpha_grid, emit_trace, load_traces, performance_profile, write_profile_csv,
    write_profile_svg, write_summary_csv,
};
use srba::lm::{BackendKind, Precision, SolverConfig, TimingMode};
use srba::synth;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "srba", version, about = "bundle adjustment with square-root landmark marginalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run solver configurations on BAL problems and write traces.
    Solve(SolveArgs),
    /// Compute performance profiles from a directory of traces.
    Profile(ProfileArgs),
    /// Compare the square-root and Schur-complement reductions on one problem.
    Check(CheckArgs),
    /// Generate a synthetic BAL problem.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// BAL problem files (plain or gzip).
    problems: Vec<PathBuf>,
    /// Key-value manifest file; command-line flags override its entries.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated backends: sqrt_ba, explicit_sc.
    #[arg(long)]
    backend: Option<String>,
    /// Comma-separated precisions: double, single.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    ftol: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    cg_max: Option<usize>,
    #[arg(long)]
    huber: Option<f64>,
    /// Worker threads (0 = all cores; default from SRBA_THREADS if set).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Preprocessing noise sigma.
    #[arg(long)]
    sigma: Option<f64>,
    /// Minimum viewing depth for observations.
    #[arg(long)]
    zmin: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace timing: wall (real) or iteration (reproducible).
    #[arg(long)]
    timing: Option<String>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Directory containing trace CSV files.
    #[arg(long)]
    traces: PathBuf,
    /// Comma-separated tolerances.
    #[arg(long, default_value = "0.1,0.01,0.001")]
    taus: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// BAL problem file (at most 50 cameras).
    problem: PathBuf,
    #[arg(long, default_value = "double")]
    precision: String,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    huber: f64,
    #[arg(long, default_value_t = 1e-2)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    zmin: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Named preset: ladybug49, trafalgar21, dubrovnik16.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 50)]
    landmarks: usize,
    #[arg(long)]
    observations: Option<usize>,
    #[arg(long, default_value_t = 6)]
    max_obs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file (BAL text).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Solve(args) => cmd_solve(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Check(args) => cmd_check(args),
        Command::Generate(args) => cmd_generate(args),
    }
}

/// Fully resolved run manifest: problems, solver matrix, output directory.
struct RunManifest {
    problems: Vec<PathBuf>,
    backends: Vec<BackendKind>,
    precisions: Vec<Precision>,
    out: PathBuf,
    preprocess: PreprocessOptions,
    config: SolverConfig,
}

fn config_error(message: impl AsRef<str>) -> ExitCode {
    eprintln!("error: {}", message.as_ref());
    ExitCode::from(2)
}

fn parse_manifest_file(path: &Path) -> Result<BTreeMap<String, Vec<String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read manifest: {e}"))?;
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("manifest line {}: expected key = value", i + 1))?;
        map.entry(key.trim().to_string())
            .or_default()
            .push(value.trim().to_string());
    }
    Ok(map)
}

fn build_manifest(args: &SolveArgs) -> Result<RunManifest, String> {
    let file = match &args.manifest {
        Some(path) => parse_manifest_file(path)?,
        None => BTreeMap::new(),
    };
    let single = |key: &str| -> Option<String> { file.get(key).and_then(|v| v.last().cloned()) };

    let mut problems: Vec<PathBuf> = file
        .get("problem")
        .map(|v| v.iter().map(PathBuf::from).collect())
        .unwrap_or_default();
    problems.extend(args.problems.iter().cloned());
    if problems.is_empty() {
        return Err("no problems given (positional arguments or manifest `problem =` lines)".into());
    }

    let backends_text = args
        .backend
        .clone()
        .or_else(|| single("backends"))
        .unwrap_or_else(|| "sqrt_ba,explicit_sc".into());
    let mut backends = Vec::new();
    for name in backends_text.split(',') {
        backends.push(
            BackendKind::parse(name.trim()).ok_or_else(|| format!("unknown backend {name:?}"))?,
        );
    }

    let precisions_text = args
        .precision
        .clone()
        .or_else(|| single("precisions"))
        .unwrap_or_else(|| "double".into());
    let mut precisions = Vec::new();
    for name in precisions_text.split(',') {
        precisions.push(
            Precision::parse(name.trim()).ok_or_else(|| format!("unknown precision {name:?}"))?,
        );
    }

    let parse_from_file = |key: &str| -> Result<Option<f64>, String> {
        match single(key) {
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| format!("manifest {key}: bad number {v:?}")),
            None => Ok(None),
        }
    };

    let env_threads = std::env::var("SRBA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());

    let mut config = SolverConfig::default();
    config.max_outer_iterations = args
        .max_iters
        .or(parse_from_file("max_iters")?.map(|v| v as usize))
        .unwrap_or(config.max_outer_iterations);
    config.function_tolerance = args
        .ftol
        .or(parse_from_file("ftol")?)
        .unwrap_or(config.function_tolerance);
    config.initial_lambda = args
        .lambda0
        .or(parse_from_file("lambda0")?)
        .unwrap_or(config.initial_lambda);
    config.cg_max_iterations = args
        .cg_max
        .or(parse_from_file("cg_max")?.map(|v| v as usize))
        .unwrap_or(config.cg_max_iterations);
    config.huber_delta = args
        .huber
        .or(parse_from_file("huber")?)
        .unwrap_or(config.huber_delta);
    config.thread_count = args
        .threads
        .or(parse_from_file("threads")?.map(|v| v as usize))
        .or(env_threads)
        .unwrap_or(0);
    config.seed = args
        .seed
        .or(parse_from_file("seed")?.map(|v| v as u64))
        .unwrap_or(1);
    let timing_text = args
        .timing
        .clone()
        .or_else(|| single("timing"))
        .unwrap_or_else(|| "wall".into());
    config.timing = match timing_text.as_str() {
        "wall" => TimingMode::Wall,
        "iteration" => TimingMode::Iteration,
        other => return Err(format!("unknown timing mode {other:?}")),
    };

    let preprocess = PreprocessOptions {
        sigma: args.sigma.or(parse_from_file("sigma")?).unwrap_or(1e-2),
        seed: config.seed,
        z_min: args.zmin.or(parse_from_file("zmin")?).unwrap_or(1e-8),
    };

    let out = args
        .out
        .clone()
        .or_else(|| single("out").map(PathBuf::from))
        .ok_or("no output directory (--out or manifest `out =`)")?;

    if config.max_outer_iterations == 0 || config.initial_lambda <= 0.0 || config.huber_delta <= 0.0 {
        return Err("iteration count, lambda0 and huber must be positive".into());
    }

    Ok(RunManifest {
        problems,
        backends,
        precisions,
        out,
        preprocess,
        config,
    })
}

fn problem_id_of(path: &Path) -> String {
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    stem.trim_end_matches(".gz")
        .trim_end_matches(".txt")
        .trim_end_matches(".bal")
        .to_string()
}

fn cmd_solve(args: SolveArgs) -> ExitCode {
    let manifest = match build_manifest(&args) {
        Ok(m) => m,
        Err(e) => return config_error(e),
    };

    let traces_dir = manifest.out.join("traces");
    if let Err(e) = std::fs::create_dir_all(&traces_dir) {
        return config_error(format!("cannot create output directory: {e}"));
    }

    let mut summaries = Vec::new();
    let mut best_costs: BTreeMap<String, f64> = BTreeMap::new();
    let mut failures = 0usize;
    let mut completed = 0usize;

    for path in &manifest.problems {
        let problem_id = problem_id_of(path);
        let raw = match load_bal(path) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("[{problem_id}] load failed: {e}");
                failures += 1;
                continue;
            }
        };
        summaries.push((problem_id.clone(), ProblemSummary::of(&raw)));
        let problem = match preprocess(&raw, &manifest.preprocess) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("[{problem_id}] preprocessing failed: {e}");
                failures += 1;
                continue;
            }
        };

        for &backend in &manifest.backends {
            for &precision in &manifest.precisions {
                let mut config = manifest.config.clone();
                config.backend = backend;
                config.precision = precision;
                let solver_id = config.solver_id();
                match srba::lm::solve_problem(&problem, &problem_id, &config) {
                    Ok(output) => {
                        let entry = best_costs.entry(problem_id.clone()).or_insert(f64::INFINITY);
                        *entry = entry.min(output.final_cost);
                        println!(
                            "[{problem_id}] {solver_id}: cost {:.6e} -> {:.6e} in {} iterations ({} accepted, {} indefinite), {:?}",
                            output.initial_cost,
                            output.final_cost,
                            output.iterations,
                            output.accepted_steps,
                            output.indefinite_rejections,
                            output.termination
                        );
                        if let Err(e) = emit_trace(&output.trace, &traces_dir) {
                            eprintln!("[{problem_id}] {solver_id}: trace write failed: {e}");
                            failures += 1;
                        } else {
                            completed += 1;
                        }
                    }
                    Err(e) => {
                        eprintln!("[{problem_id}] {solver_id}: solve failed: {e}");
                        failures += 1;
                    }
                }
            }
        }
    }

    let summary_path = manifest.out.join("problem_summary.csv");
    match std::fs::File::create(&summary_path) {
        Ok(file) => {
            let mut writer = std::io::BufWriter::new(file);
            if let Err(e) = write_summary_csv(&summaries, &mut writer) {
                eprintln!("summary write failed: {e}");
                failures += 1;
            }
        }
        Err(e) => {
            eprintln!("summary write failed: {e}");
            failures += 1;
        }
    }

    for (problem, best) in &best_costs {
        println!("[{problem}] best cost {best:.6e}");
    }
    println!(
        "{completed} cells completed, {failures} failed; traces in {}",
        traces_dir.display()
    );

    if completed == 0 && failures > 0 {
        ExitCode::from(2)
    } else if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_profile(args: ProfileArgs) -> ExitCode {
    let taus: Result<Vec<f64>, _> = args.taus.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let taus = match taus {
        Ok(t) if !t.is_empty() && t.iter().all(|&t| t > 0.0 && t < 1.0) => t,
        _ => return config_error(format!("bad tolerance list {:?}", args.taus)),
    };
    let traces = match load_traces(&args.traces) {
        Ok(t) if !t.is_empty() => t,
        Ok(_) => return config_error(format!("no traces found in {}", args.traces.display())),
        Err(e) => return config_error(format!("cannot load traces: {e}")),
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return config_error(format!("cannot create output directory: {e}"));
    }

    let alphas = alpha_grid(64, 32.0);
    for &tau in &taus {
        let profile = match performance_profile(&traces, tau, &alphas) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("profile for tau {tau} failed: {e}");
                return ExitCode::from(1);
            }
        };
        let csv = args.out.join(format!("profile_tau_{tau}.csv"));
        let svg = args.out.join(format!("profile_tau_{tau}.svg"));
        let write = || -> Result<(), srba::eval::EvalError> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&csv)?);
            write_profile_csv(&profile, &mut f)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(&svg)?);
            write_profile_svg(&profile, &mut f)?;
            Ok(())
        };
        if let Err(e) = write() {
            eprintln!("writing profile for tau {tau} failed: {e}");
            return ExitCode::from(1);
        }
        println!("tau {tau}: {} and {}", csv.display(), svg.display());
    }
    ExitCode::SUCCESS
}

fn cmd_check(args: CheckArgs) -> ExitCode {
    let precision = match Precision::parse(&args.precision) {
        Some(p) => p,
        None => return config_error(format!("unknown precision {:?}", args.precision)),
    };
    let raw = match load_bal(&args.problem) {
        Ok(p) => p,
        Err(e) => return config_error(format!("cannot load problem: {e}")),
    };
    if raw.num_cameras() > 50 {
        return config_error(format!(
            "problem has {} cameras; the equivalence check is limited to 50",
            raw.num_cameras()
        ));
    }
    let problem = match preprocess(
        &raw,
        &PreprocessOptions {
            sigma: args.sigma,
            seed: args.seed,
            z_min: args.zmin,
        },
    ) {
        Ok(p) => p,
        Err(e) => return config_error(format!("preprocessing failed: {e}")),
    };

    let report = match precision {
        Precision::Double => srba::check::equivalence_report::<f64>(&problem, args.lambda, args.huber),
        Precision::Single => srba::check::equivalence_report::<f32>(&problem, args.lambda, args.huber),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("equivalence check failed: {e}");
            return ExitCode::from(1);
        }
    };

    println!(
        "equivalence of square-root and Schur-complement reductions ({} cameras, {} landmarks, lambda {:.1e}):",
        report.n_cameras, report.n_landmarks, report.lambda
    );
    println!("  reduced matrix     max rel dev {:.3e}", report.reduced_matrix);
    println!("  reduced gradient   max rel dev {:.3e}", report.reduced_gradient);
    println!("  pose increment     max rel dev {:.3e}", report.pose_increment);
    println!("  landmark increment max rel dev {:.3e}", report.landmark_increment);

    match precision {
        Precision::Double => {
            if report.max_deviation() < 1e-6 {
                println!("PASS (all deviations below 1e-6)");
                ExitCode::SUCCESS
            } else {
                println!("FAIL (max deviation {:.3e} >= 1e-6)", report.max_deviation());
                ExitCode::from(1)
            }
        }
        Precision::Single => {
            println!("informational only in single precision (no pass/fail)");
            ExitCode::SUCCESS
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> ExitCode {
    let config = match &args.preset {
        Some(name) => match synth::preset(name) {
            Some(c) => c,
            None => {
                return config_error(format!(
                    "unknown preset {name:?} (available: {})",
                    synth::PRESET_NAMES.join(", ")
                ))
            }
        },
        None => {
            let mut c =
                synth::SceneConfig::small_random(args.cameras, args.landmarks, args.max_obs, args.seed);
            if let Some(obs) = args.observations {
                if obs < 2 * args.landmarks || obs > args.landmarks * args.max_obs.min(args.cameras) {
                    return config_error(format!(
                        "observation count {obs} out of range for {} landmarks with at most {} each",
                        args.landmarks, args.max_obs
                    ));
                }
                c.n_observations = obs;
            }
            c
        }
    };
    let problem = synth::generate(&config);
    let write = || -> Result<(), srba::BalError> {
        if let Some(parent) = args.out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
        write_bal(&problem, &mut file)?;
        Ok(())
    };
    if let Err(e) = write() {
        return config_error(format!("cannot write problem: {e}"));
    }
    let summary = ProblemSummary::of(&problem);
    println!(
        "{}: {} cameras, {} landmarks, {} observations (obs/lm mean {:.1}, std {:.1}, max {})",
        args.out.display(),
        summary.n_cameras,
        summary.n_landmarks,
        summary.n_observations,
        summary.obs_per_landmark_mean,
        summary.obs_per_landmark_std,
        summary.obs_per_landmark_max
    );
    ExitCode::SUCCESS
}

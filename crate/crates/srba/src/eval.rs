//! Convergence traces, performance profiles and result emission.
//!
//! A trace records one solver run on one problem: per iteration the wall
//! time, the best robust cost so far, the damping, the number of inner CG
//! iterations, whether the step was accepted, and the tracked peak memory.
//!
//! Performance profiles aggregate traces over a problem set. For tolerance
//! `tau` the cost threshold of problem `p` is
//! `f_tau(p) = f*(p) + tau (f_0(p) - f*(p))` with `f*` the smallest cost any
//! solver reached; `rho_tau(s, alpha)` is the percentage of problems solver
//! `s` brings below `f_tau` within `alpha` times the fastest solver's time.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace csv line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing trace for problem {problem:?}, solver {solver:?}")]
    MissingTrace { problem: String, solver: String },
    #[error("inconsistent initial costs for problem {problem:?}: {a} vs {b}")]
    InconsistentInitialCost { problem: String, a: f64, b: f64 },
    #[error("no traces given")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub time_s: f64,
    /// Best true robust cost achieved after this iteration.
    pub cost: f64,
    pub lambda: f64,
    pub cg_iterations: usize,
    pub accepted: bool,
    pub memory_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub problem_id: String,
    pub solver_id: String,
    pub precision: String,
    pub initial_cost: f64,
    pub records: Vec<IterationRecord>,
}

impl ConvergenceTrace {
    pub fn new(problem_id: impl Into<String>, solver_id: impl Into<String>, precision: impl Into<String>) -> Self {
        Self {
            problem_id: problem_id.into(),
            solver_id: solver_id.into(),
            precision: precision.into(),
            initial_cost: f64::NAN,
            records: Vec::new(),
        }
    }

    /// Checks the trace invariants: strictly increasing times and strictly
    /// decreasing accepted-step costs.
    pub fn validate(&self) -> Result<(), String> {
        for pair in self.records.windows(2) {
            if pair[1].time_s <= pair[0].time_s {
                return Err(format!(
                    "times not strictly increasing at iteration {}",
                    pair[1].iteration
                ));
            }
        }
        let mut last_accepted_cost = f64::INFINITY;
        for rec in &self.records {
            if rec.accepted && rec.iteration > 0 {
                if rec.cost >= last_accepted_cost {
                    return Err(format!(
                        "accepted cost did not decrease at iteration {}",
                        rec.iteration
                    ));
                }
                last_accepted_cost = rec.cost;
            } else if rec.iteration == 0 {
                last_accepted_cost = rec.cost;
            }
        }
        Ok(())
    }

    /// Best cost achieved over the whole run.
    pub fn best_cost(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.cost)
            .fold(self.initial_cost, f64::min)
    }
}

/// Cost threshold `f_tau = f* + tau (f0 - f*)`.
pub fn cost_threshold(f0: f64, f_star: f64, tau: f64) -> f64 {
    f_star + tau * (f0 - f_star)
}

/// Earliest recorded time at which the running-minimum cost reaches
/// `f_tau`; `None` when the trace never gets there.
pub fn time_to_threshold(trace: &ConvergenceTrace, f_tau: f64) -> Option<f64> {
    let mut running_min = f64::INFINITY;
    for rec in &trace.records {
        running_min = running_min.min(rec.cost);
        if running_min <= f_tau {
            return Some(rec.time_s);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct PerformanceProfile {
    pub tau: f64,
    pub alphas: Vec<f64>,
    /// Solver id -> percentage curve over `alphas`.
    pub curves: Vec<(String, Vec<f64>)>,
}

/// Log-spaced grid on `[1, alpha_max]`.
pub fn alpha_grid(points: usize, alpha_max: f64) -> Vec<f64> {
    assert!(points >= 2 && alpha_max > 1.0);
    (0..points)
        .map(|i| (alpha_max.ln() * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Computes the performance profile of all solvers over all problems found
/// in `traces`. Every (problem, solver) pair must be present exactly once.
pub fn performance_profile(
    traces: &[ConvergenceTrace],
    tau: f64,
    alphas: &[f64],
) -> Result<PerformanceProfile, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut problems: Vec<String> = Vec::new();
    let mut solvers: Vec<String> = Vec::new();
    for t in traces {
        if !problems.contains(&t.problem_id) {
            problems.push(t.problem_id.clone());
        }
        if !solvers.contains(&t.solver_id) {
            solvers.push(t.solver_id.clone());
        }
    }
    let mut by_pair: BTreeMap<(String, String), &ConvergenceTrace> = BTreeMap::new();
    for t in traces {
        by_pair.insert((t.problem_id.clone(), t.solver_id.clone()), t);
    }
    for p in &problems {
        for s in &solvers {
            if !by_pair.contains_key(&(p.clone(), s.clone())) {
                return Err(EvalError::MissingTrace {
                    problem: p.clone(),
                    solver: s.clone(),
                });
            }
        }
    }

    // Per problem: f0 (consistent across solvers), f*, then t_tau per solver.
    let mut times: BTreeMap<(String, String), Option<f64>> = BTreeMap::new();
    for p in &problems {
        let mut f0 = f64::NAN;
        let mut f_star = f64::INFINITY;
        for s in &solvers {
            let t = by_pair[&(p.clone(), s.clone())];
            if f0.is_nan() {
                f0 = t.initial_cost;
            } else {
                let scale = f0.abs().max(1.0);
                if (t.initial_cost - f0).abs() > 1e-3 * scale {
                    return Err(EvalError::InconsistentInitialCost {
                        problem: p.clone(),
                        a: f0,
                        b: t.initial_cost,
                    });
                }
            }
            f_star = f_star.min(t.best_cost());
        }
        let f_tau = cost_threshold(f0, f_star, tau);
        for s in &solvers {
            let t = by_pair[&(p.clone(), s.clone())];
            times.insert((p.clone(), s.clone()), time_to_threshold(t, f_tau));
        }
    }

    let mut curves = Vec::new();
    for s in &solvers {
        let mut percents = Vec::with_capacity(alphas.len());
        for &alpha in alphas {
            let mut solved = 0usize;
            for p in &problems {
                let t_self = times[&(p.clone(), s.clone())];
                let t_min = solvers
                    .iter()
                    .filter_map(|s2| times[&(p.clone(), s2.clone())])
                    .fold(f64::INFINITY, f64::min);
                if let Some(t) = t_self {
                    if t_min.is_finite() && t <= alpha * t_min {
                        solved += 1;
                    }
                }
            }
            percents.push(100.0 * solved as f64 / problems.len() as f64);
        }
        curves.push((s.clone(), percents));
    }

    Ok(PerformanceProfile {
        tau,
        alphas: alphas.to_vec(),
        curves,
    })
}

// ---- CSV and SVG emission ----

const TRACE_HEADER: &str = "problem,solver,precision,iteration,time_s,cost,lambda,cg_iterations,accepted,memory_bytes";

pub fn write_trace_csv<W: Write>(trace: &ConvergenceTrace, writer: &mut W) -> Result<(), EvalError> {
    writeln!(writer, "{TRACE_HEADER}")?;
    for rec in &trace.records {
        writeln!(
            writer,
            "{},{},{},{},{:.9},{:.17e},{:.17e},{},{},{}",
            trace.problem_id,
            trace.solver_id,
            trace.precision,
            rec.iteration,
            rec.time_s,
            rec.cost,
            rec.lambda,
            rec.cg_iterations,
            rec.accepted,
            rec.memory_bytes
        )?;
    }
    Ok(())
}

pub fn read_trace_csv<R: BufRead>(reader: R) -> Result<ConvergenceTrace, EvalError> {
    let mut trace: Option<ConvergenceTrace> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(EvalError::Parse {
                    line: 1,
                    message: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(EvalError::Parse {
                line: i + 1,
                message: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, EvalError> {
            s.parse().map_err(|_| EvalError::Parse {
                line: i + 1,
                message: format!("bad {what}: {s:?}"),
            })
        };
        let parse_u = |s: &str, what: &str| -> Result<usize, EvalError> {
            s.parse().map_err(|_| EvalError::Parse {
                line: i + 1,
                message: format!("bad {what}: {s:?}"),
            })
        };
        let t = trace.get_or_insert_with(|| ConvergenceTrace::new(fields[0], fields[1], fields[2]));
        let rec = IterationRecord {
            iteration: parse_u(fields[3], "iteration")?,
            time_s: parse_f(fields[4], "time")?,
            cost: parse_f(fields[5], "cost")?,
            lambda: parse_f(fields[6], "lambda")?,
            cg_iterations: parse_u(fields[7], "cg iterations")?,
            accepted: fields[8] == "true",
            memory_bytes: parse_u(fields[9], "memory")?,
        };
        if rec.iteration == 0 {
            t.initial_cost = rec.cost;
        }
        t.records.push(rec);
    }
    trace.ok_or(EvalError::Empty)
}

pub fn write_profile_csv<W: Write>(profile: &PerformanceProfile, writer: &mut W) -> Result<(), EvalError> {
    let mut header = String::from("alpha");
    for (solver, _) in &profile.curves {
        write!(header, ",{solver}").unwrap();
    }
    writeln!(writer, "{header}")?;
    for (i, alpha) in profile.alphas.iter().enumerate() {
        let mut row = format!("{alpha:.12e}");
        for (_, percents) in &profile.curves {
            write!(row, ",{:.12e}", percents[i]).unwrap();
        }
        writeln!(writer, "{row}")?;
    }
    Ok(())
}

pub fn read_profile_csv<R: BufRead>(reader: R, tau: f64) -> Result<PerformanceProfile, EvalError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(EvalError::Empty)?;
    let header = header?;
    let solvers: Vec<String> = header.trim().split(',').skip(1).map(String::from).collect();
    let mut alphas = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); solvers.len()];
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != solvers.len() + 1 {
            return Err(EvalError::Parse {
                line: i + 1,
                message: "field count mismatch".into(),
            });
        }
        alphas.push(fields[0].parse().map_err(|_| EvalError::Parse {
            line: i + 1,
            message: format!("bad alpha {:?}", fields[0]),
        })?);
        for (c, f) in fields[1..].iter().enumerate() {
            columns[c].push(f.parse().map_err(|_| EvalError::Parse {
                line: i + 1,
                message: format!("bad percent {f:?}"),
            })?);
        }
    }
    Ok(PerformanceProfile {
        tau,
        alphas,
        curves: solvers.into_iter().zip(columns).collect(),
    })
}

const SVG_PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Renders the profile as a simple SVG line plot (log-scaled alpha axis).
pub fn write_profile_svg<W: Write>(profile: &PerformanceProfile, writer: &mut W) -> Result<(), EvalError> {
    let (width, height) = (640.0_f64, 420.0_f64);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let alpha_max = profile.alphas.last().copied().unwrap_or(32.0);
    let x_of = |alpha: f64| left + plot_w * alpha.ln() / alpha_max.ln();
    let y_of = |pct: f64| top + plot_h * (1.0 - pct / 100.0);

    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    write!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    write!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">performance profile, tau = {}</text>"#,
        width / 2.0,
        profile.tau
    )
    .unwrap();

    for pct in (0..=100).step_by(20) {
        let y = y_of(pct as f64);
        write!(
            svg,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/>"##,
            left + plot_w
        )
        .unwrap();
        write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{pct}</text>"#,
            left - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let mut tick = 1.0;
    while tick <= alpha_max {
        let x = x_of(tick);
        write!(
            svg,
            r##"<line x1="{x}" y1="{top}" x2="{x}" y2="{}" stroke="#dddddd"/>"##,
            top + plot_h
        )
        .unwrap();
        write!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{tick}</text>"#,
            top + plot_h + 16.0
        )
        .unwrap();
        tick *= 2.0;
    }
    write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">relative time alpha</text>"#,
        left + plot_w / 2.0,
        height - 12.0
    )
    .unwrap();

    for (i, (solver, percents)) in profile.curves.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let mut points = String::new();
        for (alpha, pct) in profile.alphas.iter().zip(percents) {
            write!(points, "{:.2},{:.2} ", x_of(*alpha), y_of(*pct)).unwrap();
        }
        write!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.trim_end()
        )
        .unwrap();
        let ly = top + 16.0 * i as f64 + 8.0;
        write!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            left + 8.0,
            left + 28.0
        )
        .unwrap();
        write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{solver}</text>"#,
            left + 34.0,
            ly + 4.0
        )
        .unwrap();
    }
    write!(svg, "</svg>").unwrap();
    writer.write_all(svg.as_bytes())?;
    writeln!(writer)?;
    Ok(())
}

/// Writes the problem-size summary table (one row per problem).
pub fn write_summary_csv<W: Write>(
    rows: &[(String, crate::bal::ProblemSummary)],
    writer: &mut W,
) -> Result<(), EvalError> {
    writeln!(
        writer,
        "problem,n_cameras,n_landmarks,n_observations,obs_per_camera,obs_per_landmark_mean,obs_per_landmark_std,obs_per_landmark_max"
    )?;
    for (name, s) in rows {
        writeln!(
            writer,
            "{},{},{},{},{:.6},{:.6},{:.6},{}",
            name,
            s.n_cameras,
            s.n_landmarks,
            s.n_observations,
            s.obs_per_camera,
            s.obs_per_landmark_mean,
            s.obs_per_landmark_std,
            s.obs_per_landmark_max
        )?;
    }
    Ok(())
}

/// File name used for the trace of one (problem, solver) cell.
pub fn trace_file_name(problem_id: &str, solver_id: &str) -> String {
    format!("{problem_id}__{solver_id}.csv")
}

/// Writes one trace into `dir`, creating it if needed.
pub fn emit_trace(trace: &ConvergenceTrace, dir: &Path) -> Result<std::path::PathBuf, EvalError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(trace_file_name(&trace.problem_id, &trace.solver_id));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write_trace_csv(trace, &mut file)?;
    Ok(path)
}

/// Loads every `*.csv` trace in a directory, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<ConvergenceTrace>, EvalError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    let mut traces = Vec::new();
    for path in paths {
        let file = std::io::BufReader::new(std::fs::File::open(&path)?);
        traces.push(read_trace_csv(file)?);
    }
    Ok(traces)
}

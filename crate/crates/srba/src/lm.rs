//! Levenberg-Marquardt driver shared by both backends.
//!
//! One iteration attempts a damped step: linearize (if the previous step
//! was accepted), solve the reduced camera system, back-substitute, and
//! evaluate the true robust cost at the trial point. The gain ratio
//! `rho = actual decrease / model decrease` accepts or rejects the step and
//! drives the damping update `lambda * max(1/3, 1 - (2 rho - 1)^3)` on
//! acceptance, `lambda * nu` with doubling `nu` on rejection. Rejected
//! steps retry with the same linearization; an indefinite system counts as
//! a rejection with its own bookkeeping.

use crate::bal::BaProblem;
use crate::backend::{robust_cost, BaState, ExplicitScProblem, SqrtBaProblem};
use crate::block::MarginalizationMethod;
use crate::camera::CameraParams;
use crate::eval::{ConvergenceTrace, IterationRecord};
use crate::math::Scalar;
use crate::memory::MemoryTracker;
use crate::reduced::CgStats;
use nalgebra::Vector3;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("linearization failed: {0}")]
    Linearization(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    SqrtBa,
    ExplicitSc,
}

impl BackendKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::SqrtBa => "sqrt_ba",
            BackendKind::ExplicitSc => "explicit_sc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sqrt_ba" => Some(BackendKind::SqrtBa),
            "explicit_sc" => Some(BackendKind::ExplicitSc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn bits(&self) -> u32 {
        match self {
            Precision::Single => 32,
            Precision::Double => 64,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" | "32" => Some(Precision::Single),
            "double" | "64" => Some(Precision::Double),
            _ => None,
        }
    }
}

/// How iteration times are recorded in traces. Wall-clock timing is the
/// real measurement; iteration timing substitutes the iteration index so
/// that complete runs are byte-for-byte reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    Wall,
    Iteration,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub backend: BackendKind,
    pub precision: Precision,
    pub max_outer_iterations: usize,
    pub function_tolerance: f64,
    pub initial_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cg_max_iterations: usize,
    /// Cap of the forcing sequence `eta_k = min(cap, sqrt(|g_k| / |g_0|))`.
    pub cg_forcing_cap: f64,
    pub huber_delta: f64,
    /// 0 means use all available cores.
    pub thread_count: usize,
    pub seed: u64,
    pub marginalization: MarginalizationMethod,
    pub timing: TimingMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::SqrtBa,
            precision: Precision::Double,
            max_outer_iterations: 50,
            function_tolerance: 1e-6,
            initial_lambda: 1e-4,
            lambda_min: 1e-16,
            lambda_max: 1e16,
            cg_max_iterations: 500,
            cg_forcing_cap: 0.1,
            huber_delta: 1.0,
            thread_count: 0,
            seed: 1,
            marginalization: MarginalizationMethod::Givens,
            timing: TimingMode::Wall,
        }
    }
}

impl SolverConfig {
    pub fn solver_id(&self) -> String {
        format!("{}-{}", self.backend.name(), self.precision.bits())
    }
}

/// Diagnostics of one step attempt.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub model_decrease: f64,
    pub cg: CgStats,
}

/// A step attempt that could not produce a candidate increment.
#[derive(Debug, Clone)]
pub enum StepRejection {
    /// The damped system was numerically indefinite (failed Cholesky or
    /// negative curvature in CG); the driver increases lambda and retries.
    Indefinite { cg_iterations: usize, detail: String },
}

/// Problem interface consumed by the LM driver. The bundle adjustment
/// backends implement it; tests use small synthetic least-squares problems.
pub trait LmProblem {
    type State: Clone;
    type Step;

    /// True cost, evaluated in double precision.
    fn cost(&self, state: &Self::State) -> f64;
    /// Builds the linearization at `state` (Jacobians, scaling, gradient).
    fn linearize(&mut self, state: &Self::State) -> Result<(), SolveError>;
    /// Norm of the pose gradient of the current linearization.
    fn gradient_norm(&self) -> f64;
    /// Computes a damped step candidate with the current linearization.
    fn try_step(
        &mut self,
        lambda: f64,
        cg_tolerance: f64,
        cg_max_iterations: usize,
    ) -> Result<(Self::Step, StepInfo), StepRejection>;
    fn apply_step(&self, state: &Self::State, step: &Self::Step) -> Self::State;
    fn current_memory_bytes(&self) -> usize;
    fn peak_memory_bytes(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// Relative cost change of an accepted step fell below the tolerance
    /// (also used when the model predicts no further decrease).
    FunctionTolerance,
    MaxIterations,
    /// Damping reached its upper clamp without an acceptable step.
    NoProgress,
}

/// Damping update rule. Accepted steps scale lambda by
/// `max(1/3, 1 - (2 rho - 1)^3)` and reset `nu` to 2; rejections multiply
/// lambda by `nu` and double `nu`.
pub fn update_lambda(
    lambda: f64,
    rho: f64,
    accepted: bool,
    nu: f64,
    lambda_min: f64,
    lambda_max: f64,
) -> (f64, f64) {
    if accepted {
        let factor = (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
        ((lambda * factor).clamp(lambda_min, lambda_max), 2.0)
    } else {
        ((lambda * nu).clamp(lambda_min, lambda_max), nu * 2.0)
    }
}

/// Function-tolerance test on an accepted step:
/// `|cost_prev - cost| <= tol * cost`.
pub fn function_tolerance_reached(cost_prev: f64, cost: f64, tolerance: f64) -> bool {
    (cost_prev - cost).abs() <= tolerance * cost
}

#[derive(Debug, Clone)]
pub struct LmOutcome<S> {
    pub final_state: S,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: TerminationReason,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Rejections caused by an indefinite reduced system.
    pub indefinite_rejections: usize,
}

/// Runs the LM loop, appending one trace record per iteration (plus the
/// initial record at time zero).
pub fn run_lm<P: LmProblem>(
    problem: &mut P,
    initial_state: P::State,
    config: &SolverConfig,
    trace: &mut ConvergenceTrace,
) -> Result<LmOutcome<P::State>, SolveError> {
    let mut state = initial_state;
    let mut cost = problem.cost(&state);
    if trace.initial_cost.is_nan() {
        trace.initial_cost = cost;
    }
    trace.records.push(IterationRecord {
        iteration: 0,
        time_s: 0.0,
        cost: trace.initial_cost,
        lambda: config.initial_lambda,
        cg_iterations: 0,
        accepted: true,
        memory_bytes: problem.current_memory_bytes(),
    });

    let mut lambda = config.initial_lambda;
    let mut nu = 2.0;
    let mut needs_linearization = true;
    let mut gradient_norm_0: Option<f64> = None;
    let mut accepted_steps = 0;
    let mut rejected_steps = 0;
    let mut indefinite_rejections = 0;
    let mut termination = TerminationReason::MaxIterations;
    let mut iterations = 0;

    let clock = Instant::now();
    for iteration in 1..=config.max_outer_iterations {
        iterations = iteration;
        if needs_linearization {
            problem.linearize(&state)?;
            needs_linearization = false;
            gradient_norm_0.get_or_insert(problem.gradient_norm());
        }
        let g0 = gradient_norm_0.unwrap_or(0.0);
        let gk = problem.gradient_norm();
        let eta = if g0 > 0.0 {
            config.cg_forcing_cap.min((gk / g0).sqrt())
        } else {
            config.cg_forcing_cap
        };

        let mut record = IterationRecord {
            iteration,
            time_s: 0.0,
            cost,
            lambda,
            cg_iterations: 0,
            accepted: false,
            memory_bytes: problem.peak_memory_bytes(),
        };

        let mut stop = None;
        match problem.try_step(lambda, eta, config.cg_max_iterations) {
            Err(StepRejection::Indefinite { cg_iterations, .. }) => {
                record.cg_iterations = cg_iterations;
                rejected_steps += 1;
                indefinite_rejections += 1;
                if lambda >= config.lambda_max {
                    stop = Some(TerminationReason::NoProgress);
                }
                (lambda, nu) = update_lambda(lambda, 0.0, false, nu, config.lambda_min, config.lambda_max);
            }
            Ok((step, info)) => {
                record.cg_iterations = info.cg.iterations;
                if info.model_decrease <= 0.0 {
                    // No predicted progress left at this linearization:
                    // treat as converged rather than thrash on lambda.
                    rejected_steps += 1;
                    stop = Some(TerminationReason::FunctionTolerance);
                } else {
                    let trial = problem.apply_step(&state, &step);
                    let trial_cost = problem.cost(&trial);
                    let rho = (cost - trial_cost) / info.model_decrease;
                    if trial_cost.is_finite() && rho > 0.0 {
                        let previous_cost = cost;
                        state = trial;
                        cost = trial_cost;
                        accepted_steps += 1;
                        record.accepted = true;
                        record.cost = cost;
                        needs_linearization = true;
                        (lambda, nu) =
                            update_lambda(lambda, rho, true, nu, config.lambda_min, config.lambda_max);
                        if function_tolerance_reached(previous_cost, cost, config.function_tolerance) {
                            stop = Some(TerminationReason::FunctionTolerance);
                        }
                    } else {
                        rejected_steps += 1;
                        if lambda >= config.lambda_max {
                            stop = Some(TerminationReason::NoProgress);
                        }
                        (lambda, nu) =
                            update_lambda(lambda, 0.0, false, nu, config.lambda_min, config.lambda_max);
                    }
                }
            }
        }

        record.time_s = match config.timing {
            TimingMode::Wall => clock.elapsed().as_secs_f64(),
            TimingMode::Iteration => iteration as f64,
        };
        record.memory_bytes = problem.peak_memory_bytes();
        trace.records.push(record);

        if let Some(reason) = stop {
            termination = reason;
            break;
        }
    }

    Ok(LmOutcome {
        final_state: state,
        initial_cost: trace.initial_cost,
        final_cost: cost,
        termination,
        iterations,
        accepted_steps,
        rejected_steps,
        indefinite_rejections,
    })
}

/// Result of a full solver run on a bundle adjustment problem.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub trace: ConvergenceTrace,
    pub termination: TerminationReason,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub indefinite_rejections: usize,
    pub final_cameras: Vec<CameraParams<f64>>,
    pub final_landmarks: Vec<Vector3<f64>>,
}

/// Runs one solver configuration on a preprocessed problem.
pub fn solve_problem(
    problem: &BaProblem,
    problem_id: &str,
    config: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.thread_count)
        .build()
        .map_err(|e| SolveError::ThreadPool(e.to_string()))?;
    pool.install(|| match config.precision {
        Precision::Double => solve_typed::<f64>(problem, problem_id, config),
        Precision::Single => solve_typed::<f32>(problem, problem_id, config),
    })
}

fn solve_typed<T: Scalar>(
    problem: &BaProblem,
    problem_id: &str,
    config: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    let state = BaState::<T>::from_problem(problem);
    // The initial cost in traces is the double-precision cost of the
    // preprocessed problem, identical for every solver configuration.
    let initial_cost = robust_cost(problem, &BaState::<f64>::from_problem(problem), config.huber_delta);

    let mut trace = ConvergenceTrace::new(
        problem_id,
        config.solver_id(),
        T::PRECISION_NAME,
    );
    trace.initial_cost = initial_cost;

    let tracker = MemoryTracker::new();
    let outcome = match config.backend {
        BackendKind::SqrtBa => {
            let mut backend = SqrtBaProblem::<T>::new(
                problem,
                config.huber_delta,
                config.marginalization,
                tracker,
            );
            run_lm(&mut backend, state, config, &mut trace)?
        }
        BackendKind::ExplicitSc => {
            let mut backend = ExplicitScProblem::<T>::new(problem, config.huber_delta, tracker);
            run_lm(&mut backend, state, config, &mut trace)?
        }
    };

    let final64 = outcome.final_state.to_double();
    Ok(SolveOutput {
        trace,
        termination: outcome.termination,
        initial_cost: outcome.initial_cost,
        final_cost: outcome.final_cost,
        iterations: outcome.iterations,
        accepted_steps: outcome.accepted_steps,
        rejected_steps: outcome.rejected_steps,
        indefinite_rejections: outcome.indefinite_rejections,
        final_cameras: final64.cameras,
        final_landmarks: final64.landmarks,
    })
}

//! Bundle adjustment with QR-based landmark marginalization.
//!
//! The crate implements two algebraically equivalent ways of eliminating
//! landmark variables from the bundle adjustment normal equations:
//!
//! * a square-root formulation that marginalizes each landmark by in-place
//!   Givens QR on a dense per-landmark block, never forming the Hessian,
//! * an explicit Schur-complement baseline that assembles the block-sparse
//!   reduced camera system.
//!
//! Both backends share one Levenberg-Marquardt driver, the preconditioned
//! conjugate-gradient solver for the reduced camera system, BAL-format
//! ingestion with deterministic preprocessing, and an evaluation pipeline
//! that records convergence traces and computes performance profiles.

pub mod backend;
pub mod bal;
pub mod block;
pub mod camera;
pub mod check;
pub mod eval;
pub mod lm;
pub mod math;
pub mod memory;
pub mod reduced;
pub mod schur;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use bal::{load_bal, parse_bal, preprocess, write_bal, BaProblem, BalError, Observation, PreprocessOptions, ProblemSummary};
pub use camera::{CameraParams, ProjectionError, ResidualJacobian, CAMERA_DIM, LANDMARK_DIM};
pub use lm::{solve_problem, BackendKind, Precision, SolveError, SolveOutput, SolverConfig, TerminationReason, TimingMode};
pub use math::Scalar;

//! Solver backends: shared linearization plus the square-root and explicit
//! Schur-complement step computations behind the common [`crate::lm`]
//! driver interface.
//!
//! Both backends start from the same landmark-block linearization with
//! column scaling, so a double-precision run of either produces the same
//! damped linear system up to round-off. They differ in how the reduced
//! camera system is represented:
//!
//! * [`SqrtBaProblem`] keeps the marginalized landmark blocks and feeds
//!   their square-root factors directly to CG; damping changes are six
//!   Givens rotations per block, undone on backtracking.
//! * [`ExplicitScProblem`] assembles Hessian blocks once per linearization
//!   and recomputes the explicit block-sparse Schur complement from scratch
//!   for every damping value.

use crate::bal::BaProblem;
use crate::block::{BlockError, LandmarkBlock, MarginalizationMethod, DAMPING_CLAMP};
use crate::camera::{huber_cost, residual, CameraParams, CAMERA_DIM};
use crate::lm::{LmProblem, SolveError, StepInfo, StepRejection};
use crate::math::Scalar;
use crate::memory::MemoryTracker;
use crate::reduced::{
    compute_preconditioner, scale_columns, solve_pcg, CgTermination, ColumnScaling,
    ReducedCameraSystem,
};
use crate::schur::{
    assemble_hessian, schur_reduce, sc_back_substitute, CameraPairPattern, HessianBlocks,
    ReducedHessian,
};
use nalgebra::{SMatrix, Vector2, Vector3};
use rayon::prelude::*;
use std::sync::Arc;

/// Optimization state in working precision.
#[derive(Debug, Clone)]
pub struct BaState<T: Scalar> {
    pub cameras: Vec<CameraParams<T>>,
    pub landmarks: Vec<Vector3<T>>,
}

impl<T: Scalar> BaState<T> {
    pub fn from_problem(problem: &BaProblem) -> Self {
        Self {
            cameras: problem.cameras.iter().map(|c| c.cast::<T>()).collect(),
            landmarks: problem
                .landmarks
                .iter()
                .map(|p| p.map(T::from_double))
                .collect(),
        }
    }

    pub fn to_double(&self) -> BaState<f64> {
        BaState {
            cameras: self.cameras.iter().map(|c| c.cast::<f64>()).collect(),
            landmarks: self
                .landmarks
                .iter()
                .map(|p| p.map(|v| v.to_double()))
                .collect(),
        }
    }
}

/// Pose and landmark increments in working precision (unscaled).
#[derive(Debug, Clone)]
pub struct BaStep<T: Scalar> {
    pub delta_cameras: Vec<SMatrix<T, CAMERA_DIM, 1>>,
    pub delta_landmarks: Vec<Vector3<T>>,
}

/// True robust cost of a state, always accumulated in double precision:
/// `sum_ij rho(|r_ij|^2)` with the Huber cost `rho`. Returns infinity if
/// any projection is degenerate, which makes the driver reject the step.
pub fn robust_cost<T: Scalar>(problem: &BaProblem, state: &BaState<T>, huber_delta: f64) -> f64 {
    let state64 = state.to_double();
    let chunks: Vec<f64> = problem
        .observations
        .par_chunks(4096)
        .map(|chunk| {
            let mut acc = 0.0;
            for obs in chunk {
                let cam = &state64.cameras[obs.camera_index];
                let point = &state64.landmarks[obs.landmark_index];
                match residual(cam, point, &obs.pixel) {
                    Ok(r) => acc += huber_cost(r.norm_squared(), huber_delta),
                    Err(_) => return f64::INFINITY,
                }
            }
            acc
        })
        .collect();
    chunks.into_iter().sum()
}

/// Shared linearization product: scaled landmark blocks plus the global
/// gradient and damping diagonals in the scaled coordinates.
struct Linearization<T: Scalar> {
    blocks: Vec<LandmarkBlock<T>>,
    scaling: ColumnScaling<T>,
    /// Full pose gradient `J_p^T r`, length `9 n_p` (scaled space).
    pose_gradient: Vec<T>,
    /// Per-landmark gradient `J_l^T r` (scaled space).
    landmark_gradients: Vec<Vector3<T>>,
    /// Clamped `diag(J_p^T J_p)` of the scaled Jacobian.
    pose_damping_sq: Vec<T>,
    pose_gradient_norm: f64,
    /// Landmarks skipped because an observation no longer projects.
    excluded_landmarks: usize,
    /// Squared landmark damping scales indexed by landmark, filled once the
    /// blocks are marginalized (square-root path only).
    landmark_damping_sq: Vec<Vector3<T>>,
}

fn linearize_shared<T: Scalar>(
    problem: &BaProblem,
    state: &BaState<T>,
    huber_delta: f64,
    tracker: &Arc<MemoryTracker>,
) -> Result<Linearization<T>, SolveError> {
    let n_cams = problem.num_cameras();
    let n_lms = problem.num_landmarks();
    let huber = T::from_double(huber_delta);

    let results: Vec<Result<LandmarkBlock<T>, BlockError>> = (0..n_lms)
        .into_par_iter()
        .map(|j| {
            let obs: Vec<(usize, Vector2<T>)> = problem
                .observations_of_landmark(j)
                .iter()
                .map(|&idx| {
                    let o = &problem.observations[idx];
                    (o.camera_index, o.pixel.map(T::from_double))
                })
                .collect();
            LandmarkBlock::linearize(
                j,
                &obs,
                &state.cameras,
                &state.landmarks[j],
                huber,
                Some(tracker.clone()),
            )
        })
        .collect();

    let mut blocks = Vec::with_capacity(n_lms);
    let mut excluded = 0;
    for result in results {
        match result {
            Ok(block) => blocks.push(block),
            Err(BlockError::DegenerateObservation { .. }) => excluded += 1,
            Err(e) => return Err(SolveError::Linearization(e.to_string())),
        }
    }
    if blocks.is_empty() {
        return Err(SolveError::Linearization("no usable landmark blocks".into()));
    }

    let scaling = scale_columns(&mut blocks, n_cams, n_lms);

    let mut cam_grad = vec![SMatrix::<T, CAMERA_DIM, 1>::zeros(); n_cams];
    let mut lm_grads = vec![Vector3::<T>::zeros(); n_lms];
    let mut cam_sq = vec![SMatrix::<T, CAMERA_DIM, 1>::zeros(); n_cams];
    let mut lm_sq_unused = vec![Vector3::<T>::zeros(); n_lms];
    for block in &blocks {
        let j = block.landmark_index();
        block.accumulate_gradient(&mut cam_grad, &mut lm_grads[j]);
        block.accumulate_column_norms_sq(&mut cam_sq, &mut lm_sq_unused[j]);
    }

    let clamp = T::from_double(DAMPING_CLAMP);
    let mut pose_gradient = Vec::with_capacity(CAMERA_DIM * n_cams);
    let mut pose_damping_sq = Vec::with_capacity(CAMERA_DIM * n_cams);
    let mut grad_norm_sq = 0.0;
    for cam in 0..n_cams {
        for c in 0..CAMERA_DIM {
            let g = cam_grad[cam][c];
            pose_gradient.push(g);
            grad_norm_sq += g.to_double() * g.to_double();
            pose_damping_sq.push(cam_sq[cam][c].max(clamp));
        }
    }

    Ok(Linearization {
        blocks,
        scaling,
        pose_gradient,
        landmark_gradients: lm_grads,
        pose_damping_sq,
        pose_gradient_norm: grad_norm_sq.sqrt(),
        excluded_landmarks: excluded,
        landmark_damping_sq: vec![Vector3::zeros(); n_lms],
    })
}

/// Model cost decrease `dx^T (lambda D^2 dx - g)` of the damped linearized
/// problem, evaluated in the scaled coordinates and accumulated in double.
#[allow(clippy::too_many_arguments)]
fn model_decrease<T: Scalar>(
    lambda: f64,
    pose_gradient: &[T],
    landmark_gradients: &[Vector3<T>],
    pose_damping_sq: &[T],
    landmark_damping_sq: impl Fn(usize) -> Vector3<T>,
    delta_xp: &[T],
    delta_xl: &[(usize, Vector3<T>)],
) -> f64 {
    let mut damping_term = 0.0;
    let mut gradient_term = 0.0;
    for i in 0..delta_xp.len() {
        let d = delta_xp[i].to_double();
        damping_term += pose_damping_sq[i].to_double() * d * d;
        gradient_term += pose_gradient[i].to_double() * d;
    }
    for (j, dl) in delta_xl {
        let d_sq = landmark_damping_sq(*j);
        for c in 0..3 {
            let d = dl[c].to_double();
            damping_term += d_sq[c].to_double() * d * d;
            gradient_term += landmark_gradients[*j][c].to_double() * d;
        }
    }
    lambda * damping_term - gradient_term
}

fn unscale_step<T: Scalar>(
    scaling: &ColumnScaling<T>,
    delta_xp: &[T],
    delta_xl: &[(usize, Vector3<T>)],
    n_lms: usize,
) -> BaStep<T> {
    let n_cams = scaling.camera.len();
    let mut delta_cameras = Vec::with_capacity(n_cams);
    for cam in 0..n_cams {
        let mut d = SMatrix::<T, CAMERA_DIM, 1>::zeros();
        for c in 0..CAMERA_DIM {
            d[c] = delta_xp[CAMERA_DIM * cam + c] * scaling.camera[cam][c];
        }
        delta_cameras.push(d);
    }
    let mut delta_landmarks = vec![Vector3::zeros(); n_lms];
    for (j, dl) in delta_xl {
        delta_landmarks[*j] = dl.component_mul(&scaling.landmark[*j]);
    }
    BaStep {
        delta_cameras,
        delta_landmarks,
    }
}

fn apply_ba_step<T: Scalar>(state: &BaState<T>, step: &BaStep<T>) -> BaState<T> {
    BaState {
        cameras: state
            .cameras
            .iter()
            .zip(&step.delta_cameras)
            .map(|(cam, d)| cam.plus(d))
            .collect(),
        landmarks: state
            .landmarks
            .iter()
            .zip(&step.delta_landmarks)
            .map(|(lm, d)| lm + d)
            .collect(),
    }
}

/// Square-root backend: marginalized landmark blocks are the only
/// representation of the reduced camera system.
pub struct SqrtBaProblem<'p, T: Scalar> {
    problem: &'p BaProblem,
    huber_delta: f64,
    method: MarginalizationMethod,
    tracker: Arc<MemoryTracker>,
    lin: Option<Linearization<T>>,
    damped: bool,
}

impl<'p, T: Scalar> SqrtBaProblem<'p, T> {
    pub fn new(
        problem: &'p BaProblem,
        huber_delta: f64,
        method: MarginalizationMethod,
        tracker: Arc<MemoryTracker>,
    ) -> Self {
        Self {
            problem,
            huber_delta,
            method,
            tracker,
            lin: None,
            damped: false,
        }
    }

    /// Bytes of live landmark-block storage.
    pub fn block_bytes(&self) -> usize {
        self.lin
            .as_ref()
            .map(|l| l.blocks.iter().map(|b| b.memory_bytes()).sum())
            .unwrap_or(0)
    }

    pub fn excluded_landmarks(&self) -> usize {
        self.lin.as_ref().map(|l| l.excluded_landmarks).unwrap_or(0)
    }
}

impl<T: Scalar> LmProblem for SqrtBaProblem<'_, T> {
    type State = BaState<T>;
    type Step = BaStep<T>;

    fn cost(&self, state: &Self::State) -> f64 {
        robust_cost(self.problem, state, self.huber_delta)
    }

    fn linearize(&mut self, state: &Self::State) -> Result<(), SolveError> {
        self.lin = None; // free old blocks before allocating new ones
        self.damped = false;
        let mut lin = linearize_shared(self.problem, state, self.huber_delta, &self.tracker)?;
        let method = self.method;
        let errors: Vec<BlockError> = lin
            .blocks
            .par_iter_mut()
            .filter_map(|block| block.marginalize(method).err())
            .collect();
        if let Some(e) = errors.into_iter().next() {
            return Err(SolveError::Linearization(e.to_string()));
        }
        for block in &lin.blocks {
            let d = block.landmark_damping_diag();
            lin.landmark_damping_sq[block.landmark_index()] = d.component_mul(&d);
        }
        self.lin = Some(lin);
        Ok(())
    }

    fn gradient_norm(&self) -> f64 {
        self.lin.as_ref().map(|l| l.pose_gradient_norm).unwrap_or(0.0)
    }

    fn try_step(
        &mut self,
        lambda: f64,
        cg_tolerance: f64,
        cg_max_iterations: usize,
    ) -> Result<(Self::Step, StepInfo), StepRejection> {
        let lin = self.lin.as_mut().expect("linearize before try_step");
        let lambda_t = T::from_double(lambda);

        // Backtracking reuses the same linearization: undo the previous
        // damping, then fold in the new one.
        if self.damped {
            lin.blocks.par_iter_mut().for_each(|b| {
                b.undo_damping().expect("damped state");
            });
        }
        lin.blocks.par_iter_mut().for_each(|b| {
            let d_l = b.landmark_damping_diag();
            b.apply_damping(lambda_t, &d_l).expect("marginalized state");
        });
        self.damped = true;

        let n_cams = self.problem.num_cameras();
        let preconditioner =
            match compute_preconditioner(&lin.blocks, lambda_t, &lin.pose_damping_sq, n_cams) {
                Ok(p) => p,
                Err(e) => {
                    return Err(StepRejection::Indefinite {
                        cg_iterations: 0,
                        detail: e.to_string(),
                    })
                }
            };
        let system = ReducedCameraSystem::new(&lin.blocks, lambda_t, &lin.pose_damping_sq);
        let rhs = system.rhs();
        let (x, stats) = solve_pcg(&system, &preconditioner, &rhs, cg_tolerance, cg_max_iterations);
        if stats.termination == CgTermination::Indefinite {
            return Err(StepRejection::Indefinite {
                cg_iterations: stats.iterations,
                detail: "negative curvature in CG".into(),
            });
        }

        let delta_xp: Vec<T> = x.iter().map(|&v| -v).collect();
        let delta_xl: Vec<(usize, Vector3<T>)> = lin
            .blocks
            .par_iter()
            .map(|b| (b.landmark_index(), b.back_substitute(&delta_xp)))
            .collect();

        let decrease = model_decrease(
            lambda,
            &lin.pose_gradient,
            &lin.landmark_gradients,
            &lin.pose_damping_sq,
            |j| lin.landmark_damping_sq[j],
            &delta_xp,
            &delta_xl,
        );

        let step = unscale_step(&lin.scaling, &delta_xp, &delta_xl, self.problem.num_landmarks());
        Ok((
            step,
            StepInfo {
                model_decrease: decrease,
                cg: stats,
            },
        ))
    }

    fn apply_step(&self, state: &Self::State, step: &Self::Step) -> Self::State {
        apply_ba_step(state, step)
    }

    fn current_memory_bytes(&self) -> usize {
        self.tracker.current_bytes()
    }

    fn peak_memory_bytes(&self) -> usize {
        self.tracker.peak_bytes()
    }
}

/// Explicit Schur-complement backend.
pub struct ExplicitScProblem<'p, T: Scalar> {
    problem: &'p BaProblem,
    huber_delta: f64,
    tracker: Arc<MemoryTracker>,
    pattern: CameraPairPattern,
    hessian: Option<HessianBlocks<T>>,
    hessian_bytes: usize,
    reduced_bytes: usize,
    scaling: Option<ColumnScaling<T>>,
    pose_gradient: Vec<T>,
    landmark_gradients: Vec<Vector3<T>>,
    pose_gradient_norm: f64,
}

impl<'p, T: Scalar> ExplicitScProblem<'p, T> {
    pub fn new(problem: &'p BaProblem, huber_delta: f64, tracker: Arc<MemoryTracker>) -> Self {
        let pattern = CameraPairPattern::new(
            problem.num_cameras(),
            (0..problem.num_landmarks()).map(|j| {
                problem
                    .observations_of_landmark(j)
                    .iter()
                    .map(|&idx| problem.observations[idx].camera_index)
                    .collect()
            }),
        );
        Self {
            problem,
            huber_delta,
            tracker,
            pattern,
            hessian: None,
            hessian_bytes: 0,
            reduced_bytes: 0,
            scaling: None,
            pose_gradient: Vec::new(),
            landmark_gradients: Vec::new(),
            pose_gradient_norm: 0.0,
        }
    }

    fn hessian_size_bytes(h: &HessianBlocks<T>) -> usize {
        let scalar = std::mem::size_of::<T>();
        let coupling: usize = h.h_pl.iter().map(|v| v.len()).sum();
        scalar
            * (h.h_pp.len() * CAMERA_DIM * CAMERA_DIM
                + coupling * CAMERA_DIM * 3
                + h.h_ll.len() * 9
                + h.b_p.len() * CAMERA_DIM
                + h.b_l.len() * 3)
    }

    fn set_hessian(&mut self, h: Option<HessianBlocks<T>>) {
        self.tracker.free(self.hessian_bytes);
        self.hessian_bytes = h.as_ref().map(Self::hessian_size_bytes).unwrap_or(0);
        self.tracker.alloc(self.hessian_bytes);
        self.hessian = h;
    }

    fn track_reduced(&mut self, reduced: &ReducedHessian<T>) {
        self.tracker.free(self.reduced_bytes);
        self.reduced_bytes = std::mem::size_of::<T>()
            * (reduced.num_blocks() * CAMERA_DIM * CAMERA_DIM + reduced.rhs().len());
        self.tracker.alloc(self.reduced_bytes);
    }
}

impl<T: Scalar> Drop for ExplicitScProblem<'_, T> {
    fn drop(&mut self) {
        self.tracker.free(self.hessian_bytes + self.reduced_bytes);
    }
}

impl<T: Scalar> LmProblem for ExplicitScProblem<'_, T> {
    type State = BaState<T>;
    type Step = BaStep<T>;

    fn cost(&self, state: &Self::State) -> f64 {
        robust_cost(self.problem, state, self.huber_delta)
    }

    fn linearize(&mut self, state: &Self::State) -> Result<(), SolveError> {
        let lin = linearize_shared(self.problem, state, self.huber_delta, &self.tracker)?;
        let h = assemble_hessian(&lin.blocks, self.problem.num_cameras(), self.problem.num_landmarks());
        self.set_hessian(Some(h));
        self.scaling = Some(lin.scaling);
        self.pose_gradient = lin.pose_gradient;
        self.landmark_gradients = lin.landmark_gradients;
        self.pose_gradient_norm = lin.pose_gradient_norm;
        // Landmark blocks are dropped here; the SC solver keeps only the
        // Hessian representation.
        Ok(())
    }

    fn gradient_norm(&self) -> f64 {
        self.pose_gradient_norm
    }

    fn try_step(
        &mut self,
        lambda: f64,
        cg_tolerance: f64,
        cg_max_iterations: usize,
    ) -> Result<(Self::Step, StepInfo), StepRejection> {
        let lambda_t = T::from_double(lambda);
        let reduced = {
            let h = self.hessian.as_ref().expect("linearize before try_step");
            match schur_reduce(h, lambda_t, &self.pattern) {
                Ok(r) => r,
                Err(e) => {
                    return Err(StepRejection::Indefinite {
                        cg_iterations: 0,
                        detail: e.to_string(),
                    })
                }
            }
        };
        self.track_reduced(&reduced);

        let preconditioner = match reduced.block_jacobi() {
            Ok(p) => p,
            Err(e) => {
                return Err(StepRejection::Indefinite {
                    cg_iterations: 0,
                    detail: e.to_string(),
                })
            }
        };
        let (x, stats) = solve_pcg(
            &reduced,
            &preconditioner,
            reduced.rhs(),
            cg_tolerance,
            cg_max_iterations,
        );
        if stats.termination == CgTermination::Indefinite {
            return Err(StepRejection::Indefinite {
                cg_iterations: stats.iterations,
                detail: "negative curvature in CG".into(),
            });
        }

        let delta_xp: Vec<T> = x.iter().map(|&v| -v).collect();
        let h = self.hessian.as_ref().unwrap();
        let delta_xl_all = match sc_back_substitute(h, lambda_t, &delta_xp) {
            Ok(v) => v,
            Err(e) => {
                return Err(StepRejection::Indefinite {
                    cg_iterations: stats.iterations,
                    detail: e.to_string(),
                })
            }
        };
        let delta_xl: Vec<(usize, Vector3<T>)> =
            delta_xl_all.into_iter().enumerate().collect();

        let decrease = model_decrease(
            lambda,
            &self.pose_gradient,
            &self.landmark_gradients,
            &h.pose_damping_sq,
            |j| h.landmark_damping_sq[j],
            &delta_xp,
            &delta_xl,
        );

        let step = unscale_step(
            self.scaling.as_ref().unwrap(),
            &delta_xp,
            &delta_xl,
            self.problem.num_landmarks(),
        );
        Ok((
            step,
            StepInfo {
                model_decrease: decrease,
                cg: stats,
            },
        ))
    }

    fn apply_step(&self, state: &Self::State, step: &Self::Step) -> Self::State {
        apply_ba_step(state, step)
    }

    fn current_memory_bytes(&self) -> usize {
        self.tracker.current_bytes()
    }

    fn peak_memory_bytes(&self) -> usize {
        self.tracker.peak_bytes()
    }
}

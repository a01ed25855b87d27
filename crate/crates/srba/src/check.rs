//! Numerical equivalence report between the two marginalization paths.
//!
//! Runs both reductions on the first linearization of a (small) problem and
//! measures how far the explicit Schur complement and the square-root
//! marginalization are from each other: reduced matrix, reduced gradient,
//! pose increment from a dense solve of each reduced system, and landmark
//! increments from each back substitution.

use crate::backend::BaState;
use crate::bal::BaProblem;
use crate::block::{LandmarkBlock, MarginalizationMethod, DAMPING_CLAMP};
use crate::camera::CAMERA_DIM;
use crate::lm::SolveError;
use crate::math::Scalar;
use crate::reduced::{scale_columns, LinearOperator, ReducedCameraSystem};
use crate::schur::{assemble_hessian, sc_back_substitute, schur_reduce, CameraPairPattern};
use nalgebra::{DMatrix, DVector, SMatrix, Vector2, Vector3};

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub n_cameras: usize,
    pub n_landmarks: usize,
    pub lambda: f64,
    /// Maximum relative deviations between the two paths.
    pub reduced_matrix: f64,
    pub reduced_gradient: f64,
    pub pose_increment: f64,
    pub landmark_increment: f64,
}

impl EquivalenceReport {
    pub fn max_deviation(&self) -> f64 {
        self.reduced_matrix
            .max(self.reduced_gradient)
            .max(self.pose_increment)
            .max(self.landmark_increment)
    }
}

/// Builds the report at the problem's current state with damping `lambda`.
pub fn equivalence_report<T: Scalar>(
    problem: &BaProblem,
    lambda: f64,
    huber_delta: f64,
) -> Result<EquivalenceReport, SolveError> {
    let n_cams = problem.num_cameras();
    let n_lms = problem.num_landmarks();
    let state = BaState::<T>::from_problem(problem);
    let huber = T::from_double(huber_delta);
    let lambda_t = T::from_double(lambda);

    let mut blocks = Vec::with_capacity(n_lms);
    for j in 0..n_lms {
        let obs: Vec<(usize, Vector2<T>)> = problem
            .observations_of_landmark(j)
            .iter()
            .map(|&idx| {
                let o = &problem.observations[idx];
                (o.camera_index, o.pixel.map(T::from_double))
            })
            .collect();
        let block =
            LandmarkBlock::linearize(j, &obs, &state.cameras, &state.landmarks[j], huber, None)
                .map_err(|e| SolveError::Linearization(e.to_string()))?;
        blocks.push(block);
    }
    scale_columns(&mut blocks, n_cams, n_lms);

    let mut cam_sq = vec![SMatrix::<T, CAMERA_DIM, 1>::zeros(); n_cams];
    let mut lm_sq = vec![Vector3::<T>::zeros(); n_lms];
    for block in &blocks {
        block.accumulate_column_norms_sq(&mut cam_sq, &mut lm_sq[block.landmark_index()]);
    }
    let clamp = T::from_double(DAMPING_CLAMP);
    let d_sq: Vec<T> = cam_sq
        .iter()
        .flat_map(|v| (0..CAMERA_DIM).map(|c| v[c].max(clamp)).collect::<Vec<_>>())
        .collect();

    // Explicit Schur complement.
    let h = assemble_hessian(&blocks, n_cams, n_lms);
    let pattern = CameraPairPattern::new(n_cams, blocks.iter().map(|b| b.pose_indices().to_vec()));
    let reduced = schur_reduce(&h, lambda_t, &pattern)
        .map_err(|e| SolveError::Linearization(e.to_string()))?;
    let sc_dense = reduced.dense().map(|v| v.to_double());
    let sc_rhs = DVector::from_iterator(reduced.rhs().len(), reduced.rhs().iter().map(|v| v.to_double()));

    // Square-root marginalization with landmark damping folded in.
    for block in &mut blocks {
        block
            .marginalize(MarginalizationMethod::Givens)
            .map_err(|e| SolveError::Linearization(e.to_string()))?;
        let d_l = block.landmark_damping_diag();
        block
            .apply_damping(lambda_t, &d_l)
            .map_err(|e| SolveError::Linearization(e.to_string()))?;
    }
    let system = ReducedCameraSystem::new(&blocks, lambda_t, &d_sq);
    let dim = CAMERA_DIM * n_cams;
    let mut nm_dense = DMatrix::<f64>::zeros(dim, dim);
    let mut out = vec![T::zero(); dim];
    for i in 0..dim {
        let mut e = vec![T::zero(); dim];
        e[i] = T::one();
        system.apply(&e, &mut out);
        for r in 0..dim {
            nm_dense[(r, i)] = out[r].to_double();
        }
    }
    let nm_rhs_t = system.rhs();
    let nm_rhs = DVector::from_iterator(dim, nm_rhs_t.iter().map(|v| v.to_double()));

    let dev_matrix = (&sc_dense - &nm_dense).amax() / sc_dense.amax().max(1e-300);
    let dev_gradient = (&sc_rhs - &nm_rhs).amax() / sc_rhs.amax().max(1e-300);

    // Pose increment: dense Cholesky solve of each reduced system.
    let chol_sc = sc_dense
        .clone()
        .cholesky()
        .ok_or_else(|| SolveError::Linearization("SC reduced matrix not positive definite".into()))?;
    let chol_nm = nm_dense
        .clone()
        .cholesky()
        .ok_or_else(|| SolveError::Linearization("NM reduced matrix not positive definite".into()))?;
    let dxp_sc = -(chol_sc.solve(&sc_rhs));
    let dxp_nm = -(chol_nm.solve(&nm_rhs));
    let dev_dxp = (&dxp_sc - &dxp_nm).amax() / dxp_sc.amax().max(1e-300);

    // Landmark increments via each path's own back substitution.
    let dxp_sc_t: Vec<T> = dxp_sc.iter().map(|&v| T::from_double(v)).collect();
    let dxp_nm_t: Vec<T> = dxp_nm.iter().map(|&v| T::from_double(v)).collect();
    let dxl_sc = sc_back_substitute(&h, lambda_t, &dxp_sc_t)
        .map_err(|e| SolveError::Linearization(e.to_string()))?;
    let mut dev_dxl: f64 = 0.0;
    let mut scale_dxl: f64 = 1e-300;
    for block in &blocks {
        let nm = block.back_substitute(&dxp_nm_t);
        let sc = dxl_sc[block.landmark_index()];
        for c in 0..3 {
            dev_dxl = dev_dxl.max((nm[c].to_double() - sc[c].to_double()).abs());
            scale_dxl = scale_dxl.max(sc[c].to_double().abs());
        }
    }

    Ok(EquivalenceReport {
        n_cameras: n_cams,
        n_landmarks: n_lms,
        lambda,
        reduced_matrix: dev_matrix,
        reduced_gradient: dev_gradient,
        pose_increment: dev_dxp,
        landmark_increment: dev_dxl / scale_dxl,
    })
}

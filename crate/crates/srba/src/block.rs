//! Dense per-landmark storage and in-place QR marginalization.
//!
//! Each landmark with `k` observations owns one contiguous row-major
//! `(2k+3) x (9k+4)` matrix holding the stacked 2x9 pose-Jacobian blocks
//! (one column group per observing camera, ordered by camera index), the
//! 2k x 3 landmark Jacobian, the residual column, and three damping rows:
//!
//! ```text
//!        | J_p(cam a)  J_p(cam b) ...  J_l   r |   2 rows per observation
//!        |     0           0      ...   0    0 |   3 damping rows
//! ```
//!
//! Marginalization upper-triangularizes the landmark-Jacobian columns with
//! Givens rotations applied to whole rows. Afterwards the top three rows
//! hold `[Q1^T J_p | R1 | Q1^T r]` (used for back substitution) and the
//! rows below hold `[Q2^T J_p | 0 | Q2^T r]`, the square-root form of the
//! reduced camera system. Levenberg-Marquardt landmark damping folds a
//! `sqrt(lambda) D_l` diagonal into the marginalized block with exactly six
//! Givens rotations that are stored so they can be undone on backtracking.

use crate::camera::{CameraParams, ProjectionError, CAMERA_DIM};
use crate::math::Scalar;
use crate::memory::MemoryTracker;
use nalgebra::{DMatrix, DVector, SMatrix, Vector2, Vector3};
use std::sync::Arc;
use thiserror::Error;

/// Relative threshold on the diagonal of `R1` below which a landmark is
/// flagged rank-deficient and excluded from the reduced system.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Lower clamp for squared damping scales `D^2 = diag(J^T J)`.
pub const DAMPING_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("landmark {landmark}: observation in camera {camera} does not project")]
    DegenerateObservation { landmark: usize, camera: usize },
    #[error("landmark {landmark} has {count} observations, need at least 2")]
    TooFewObservations { landmark: usize, count: usize },
    #[error("operation requires block state {expected:?}, found {found:?}")]
    WrongState { expected: BlockState, found: BlockState },
    #[error("negative damping parameter {0}")]
    NegativeLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockState {
    Linearized,
    Marginalized,
    MarginalizedDamped,
}

/// One Givens rotation acting on a row pair; `c^2 + s^2 = 1`.
#[derive(Debug, Clone, Copy)]
pub struct GivensRotation<T: Scalar> {
    pub pivot_row: usize,
    pub elim_row: usize,
    pub c: T,
    pub s: T,
}

/// Rotation coefficients `(c, s)` that zero the entry `a_elim` when the
/// rotation is applied to the (pivot, elim) row pair:
/// `c = a_pivot / h`, `s = a_elim / h` with `h = sqrt(a_pivot^2 + a_elim^2)`.
///
/// Returns the identity rotation when `a_elim` is already zero (including
/// the fully degenerate case of both entries zero).
pub fn givens_coeffs<T: Scalar>(a_pivot: T, a_elim: T) -> (T, T) {
    if a_elim == T::zero() {
        return (T::one(), T::zero());
    }
    let h = a_pivot.hypot(a_elim);
    (a_pivot / h, a_elim / h)
}

/// How the landmark Jacobian is triangularized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalizationMethod {
    #[default]
    Givens,
    Householder,
}

#[derive(Debug)]
pub struct LandmarkBlock<T: Scalar> {
    landmark_index: usize,
    pose_indices: Vec<usize>,
    /// Row-major (2k+3) x (9k+4) storage.
    data: Vec<T>,
    cols: usize,
    state: BlockState,
    damping_rotations: Vec<GivensRotation<T>>,
    /// Damping diagonal `D_l` computed from the (scaled) landmark-Jacobian
    /// column norms at marginalization time.
    landmark_damping: Vector3<T>,
    /// Largest absolute landmark-Jacobian entry at marginalization time;
    /// reference scale for the rank test.
    jl_max_abs: T,
    degenerate: bool,
    tracker: Option<Arc<MemoryTracker>>,
}

impl<T: Scalar> Clone for LandmarkBlock<T> {
    fn clone(&self) -> Self {
        if let Some(t) = &self.tracker {
            t.alloc(self.data.len() * std::mem::size_of::<T>());
        }
        Self {
            landmark_index: self.landmark_index,
            pose_indices: self.pose_indices.clone(),
            data: self.data.clone(),
            cols: self.cols,
            state: self.state,
            damping_rotations: self.damping_rotations.clone(),
            landmark_damping: self.landmark_damping,
            jl_max_abs: self.jl_max_abs,
            degenerate: self.degenerate,
            tracker: self.tracker.clone(),
        }
    }
}

impl<T: Scalar> Drop for LandmarkBlock<T> {
    fn drop(&mut self) {
        if let Some(t) = &self.tracker {
            t.free(self.data.len() * std::mem::size_of::<T>());
        }
    }
}

impl<T: Scalar> LandmarkBlock<T> {
    /// Linearizes one landmark: evaluates the weighted residuals and
    /// Jacobians of all its observations and stores them in block layout.
    ///
    /// `observations` are `(camera_index, pixel)` pairs; they are stored in
    /// ascending camera order.
    pub fn linearize(
        landmark_index: usize,
        observations: &[(usize, Vector2<T>)],
        cameras: &[CameraParams<T>],
        point: &Vector3<T>,
        huber_delta: T,
        tracker: Option<Arc<MemoryTracker>>,
    ) -> Result<Self, BlockError> {
        let k = observations.len();
        if k < 2 {
            return Err(BlockError::TooFewObservations {
                landmark: landmark_index,
                count: k,
            });
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| observations[i].0);

        let rows = 2 * k + 3;
        let cols = CAMERA_DIM * k + 4;
        let mut block = Self {
            landmark_index,
            pose_indices: order.iter().map(|&i| observations[i].0).collect(),
            data: vec![T::zero(); rows * cols],
            cols,
            state: BlockState::Linearized,
            damping_rotations: Vec::new(),
            landmark_damping: Vector3::zeros(),
            jl_max_abs: T::zero(),
            degenerate: false,
            tracker,
        };
        if let Some(t) = &block.tracker {
            t.alloc(block.data.len() * std::mem::size_of::<T>());
        }

        for (slot, &obs_i) in order.iter().enumerate() {
            let (cam_index, pixel) = observations[obs_i];
            let rj = crate::camera::residual_jacobian(&cameras[cam_index], point, &pixel, huber_delta)
                .map_err(|_: ProjectionError| BlockError::DegenerateObservation {
                    landmark: landmark_index,
                    camera: cam_index,
                })?;
            let r0 = 2 * slot;
            let c0 = CAMERA_DIM * slot;
            for row in 0..2 {
                for col in 0..CAMERA_DIM {
                    *block.at_mut(r0 + row, c0 + col) = rj.j_cam[(row, col)];
                }
                for col in 0..3 {
                    *block.at_mut(r0 + row, block.lm_col(col)) = rj.j_lm[(row, col)];
                }
                *block.at_mut(r0 + row, block.residual_col()) = rj.r[row];
            }
        }
        Ok(block)
    }

    /// Builds a block from raw parts; used for synthetic systems and tests.
    ///
    /// `jp` is `2k x 9k` (column group `i` belongs to `pose_indices[i]`),
    /// `jl` is `2k x 3` and `r` has length `2k`.
    pub fn from_parts(
        landmark_index: usize,
        pose_indices: Vec<usize>,
        jp: &DMatrix<T>,
        jl: &DMatrix<T>,
        r: &DVector<T>,
    ) -> Self {
        let k = pose_indices.len();
        assert!(k >= 2);
        assert_eq!(jp.nrows(), 2 * k);
        assert_eq!(jp.ncols(), CAMERA_DIM * k);
        assert_eq!(jl.nrows(), 2 * k);
        assert_eq!(jl.ncols(), 3);
        assert_eq!(r.len(), 2 * k);
        let rows = 2 * k + 3;
        let cols = CAMERA_DIM * k + 4;
        let mut block = Self {
            landmark_index,
            pose_indices,
            data: vec![T::zero(); rows * cols],
            cols,
            state: BlockState::Linearized,
            damping_rotations: Vec::new(),
            landmark_damping: Vector3::zeros(),
            jl_max_abs: T::zero(),
            degenerate: false,
            tracker: None,
        };
        for row in 0..2 * k {
            for col in 0..CAMERA_DIM * k {
                *block.at_mut(row, col) = jp[(row, col)];
            }
            for col in 0..3 {
                *block.at_mut(row, block.lm_col(col)) = jl[(row, col)];
            }
            *block.at_mut(row, block.residual_col()) = r[row];
        }
        block
    }

    pub fn landmark_index(&self) -> usize {
        self.landmark_index
    }

    /// Number of observations `k`.
    pub fn num_poses(&self) -> usize {
        self.pose_indices.len()
    }

    /// Camera indices observing this landmark, ascending.
    pub fn pose_indices(&self) -> &[usize] {
        &self.pose_indices
    }

    pub fn state(&self) -> BlockState {
        self.state
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn rows(&self) -> usize {
        2 * self.num_poses() + 3
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// First column of the landmark-Jacobian group.
    fn lm_col(&self, i: usize) -> usize {
        CAMERA_DIM * self.num_poses() + i
    }

    fn residual_col(&self) -> usize {
        CAMERA_DIM * self.num_poses() + 3
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    #[inline]
    fn at_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.cols + col]
    }

    fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Storage size in bytes: rows * cols * scalar size.
    pub fn memory_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<T>()
    }

    /// Damping diagonal `D_l` derived from the landmark columns, available
    /// once the block is marginalized.
    pub fn landmark_damping_diag(&self) -> Vector3<T> {
        self.landmark_damping
    }

    fn apply_rotation(&mut self, rot: &GivensRotation<T>) {
        debug_assert_ne!(rot.pivot_row, rot.elim_row);
        let cols = self.cols;
        let (pa, pb) = (rot.pivot_row * cols, rot.elim_row * cols);
        for col in 0..cols {
            let x = self.data[pa + col];
            let y = self.data[pb + col];
            self.data[pa + col] = rot.c * x + rot.s * y;
            self.data[pb + col] = -rot.s * x + rot.c * y;
        }
    }

    fn apply_rotation_transposed(&mut self, rot: &GivensRotation<T>) {
        let cols = self.cols;
        let (pa, pb) = (rot.pivot_row * cols, rot.elim_row * cols);
        for col in 0..cols {
            let x = self.data[pa + col];
            let y = self.data[pb + col];
            self.data[pa + col] = rot.c * x - rot.s * y;
            self.data[pb + col] = rot.s * x + rot.c * y;
        }
    }

    /// In-place QR marginalization of the landmark columns.
    ///
    /// Rotations run over the observation rows only; the damping rows stay
    /// zero. Landmark columns are eliminated left to right, within each
    /// column bottom to top against the diagonal row of that column.
    pub fn marginalize(&mut self, method: MarginalizationMethod) -> Result<(), BlockError> {
        if self.state != BlockState::Linearized {
            return Err(BlockError::WrongState {
                expected: BlockState::Linearized,
                found: self.state,
            });
        }
        let k = self.num_poses();
        let obs_rows = 2 * k;

        let mut jl_max = T::zero();
        let mut col_norms_sq: Vector3<T> = Vector3::zeros();
        for row in 0..obs_rows {
            for c in 0..3 {
                let v = self.at(row, self.lm_col(c));
                jl_max = jl_max.max(v.abs());
                col_norms_sq[c] += v * v;
            }
        }
        self.jl_max_abs = jl_max;
        let clamp = T::from_double(DAMPING_CLAMP);
        self.landmark_damping =
            Vector3::new(col_norms_sq[0].max(clamp), col_norms_sq[1].max(clamp), col_norms_sq[2].max(clamp))
                .map(|v| v.sqrt());

        match method {
            MarginalizationMethod::Givens => {
                for c in 0..3 {
                    let col = self.lm_col(c);
                    for i in ((c + 1)..obs_rows).rev() {
                        let (cc, ss) = givens_coeffs(self.at(c, col), self.at(i, col));
                        let rot = GivensRotation { pivot_row: c, elim_row: i, c: cc, s: ss };
                        if ss != T::zero() {
                            self.apply_rotation(&rot);
                        }
                        *self.at_mut(i, col) = T::zero();
                    }
                }
            }
            MarginalizationMethod::Householder => self.householder_triangularize(),
        }

        // Nullspace rows hold explicit zeros in the landmark columns.
        for row in 3..obs_rows {
            for c in 0..3 {
                *self.at_mut(row, self.lm_col(c)) = T::zero();
            }
        }

        let tol = T::from_double(RANK_TOLERANCE) * self.jl_max_abs;
        self.degenerate = (0..3).any(|c| self.at(c, self.lm_col(c)).abs() < tol);
        self.state = BlockState::Marginalized;
        Ok(())
    }

    /// Three Householder reflections over the observation rows; same
    /// triangularization as the Givens path up to row signs, but without
    /// stored elementary rotations.
    fn householder_triangularize(&mut self) {
        let obs_rows = 2 * self.num_poses();
        let cols = self.cols;
        for c in 0..3 {
            let col = self.lm_col(c);
            let seg = obs_rows - c;
            let mut v = vec![T::zero(); seg];
            let mut norm_sq = T::zero();
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = self.at(c + i, col);
                norm_sq += *vi * *vi;
            }
            let norm = norm_sq.sqrt();
            if norm == T::zero() {
                continue;
            }
            let alpha = if v[0] >= T::zero() { -norm } else { norm };
            v[0] -= alpha;
            let mut v_dot = T::zero();
            for vi in &v {
                v_dot += *vi * *vi;
            }
            if v_dot == T::zero() {
                continue;
            }
            let beta = T::from_double(2.0) / v_dot;
            for j in 0..cols {
                let mut s = T::zero();
                for (i, vi) in v.iter().enumerate() {
                    s += *vi * self.data[(c + i) * cols + j];
                }
                let bs = beta * s;
                for (i, vi) in v.iter().enumerate() {
                    self.data[(c + i) * cols + j] -= bs * *vi;
                }
            }
        }
    }

    /// Folds `sqrt(lambda) * D_l` into the marginalized block with six
    /// stored Givens rotations.
    pub fn apply_damping(&mut self, lambda: T, d_l: &Vector3<T>) -> Result<(), BlockError> {
        if self.state != BlockState::Marginalized {
            return Err(BlockError::WrongState {
                expected: BlockState::Marginalized,
                found: self.state,
            });
        }
        if lambda < T::zero() {
            return Err(BlockError::NegativeLambda(lambda.to_double()));
        }
        let sqrt_lambda = lambda.sqrt();
        let obs_rows = 2 * self.num_poses();
        for m in 0..3 {
            *self.at_mut(obs_rows + m, self.lm_col(m)) = sqrt_lambda * d_l[m];
        }
        self.damping_rotations.clear();
        for m in 0..3 {
            let damp_row = obs_rows + m;
            for c in m..3 {
                let col = self.lm_col(c);
                let (cc, ss) = givens_coeffs(self.at(c, col), self.at(damp_row, col));
                let rot = GivensRotation { pivot_row: c, elim_row: damp_row, c: cc, s: ss };
                if ss != T::zero() {
                    self.apply_rotation(&rot);
                }
                *self.at_mut(damp_row, col) = T::zero();
                self.damping_rotations.push(rot);
            }
        }
        debug_assert_eq!(self.damping_rotations.len(), 6);
        self.state = BlockState::MarginalizedDamped;
        Ok(())
    }

    /// Reverts [`Self::apply_damping`] by applying the transposed rotations
    /// in reverse order and zeroing the damping rows.
    pub fn undo_damping(&mut self) -> Result<(), BlockError> {
        if self.state != BlockState::MarginalizedDamped {
            return Err(BlockError::WrongState {
                expected: BlockState::MarginalizedDamped,
                found: self.state,
            });
        }
        let rotations: Vec<_> = self.damping_rotations.drain(..).collect();
        for rot in rotations.iter().rev() {
            if rot.s != T::zero() {
                self.apply_rotation_transposed(rot);
            }
        }
        let obs_rows = 2 * self.num_poses();
        let cols = self.cols;
        for row in obs_rows..obs_rows + 3 {
            for col in 0..cols {
                self.data[row * cols + col] = T::zero();
            }
        }
        self.state = BlockState::Marginalized;
        Ok(())
    }

    /// Recovers the landmark increment from the pose increment:
    /// `dx_l = -R1^{-1} (Q1^T r + Q1^T J_p dx_p)`.
    ///
    /// `delta_xp` is the full (scaled) pose increment vector of length
    /// `9 * n_cameras`. Degenerate blocks return a zero increment.
    pub fn back_substitute(&self, delta_xp: &[T]) -> Vector3<T> {
        debug_assert_ne!(self.state, BlockState::Linearized);
        if self.degenerate {
            return Vector3::zeros();
        }
        let mut rhs = Vector3::zeros();
        for m in 0..3 {
            let mut acc = self.at(m, self.residual_col());
            for (g, &cam) in self.pose_indices.iter().enumerate() {
                let base = CAMERA_DIM * g;
                let vbase = CAMERA_DIM * cam;
                for c in 0..CAMERA_DIM {
                    acc += self.at(m, base + c) * delta_xp[vbase + c];
                }
            }
            rhs[m] = acc;
        }
        let mut x = Vector3::zeros();
        for m in (0..3).rev() {
            let mut acc = -rhs[m];
            for c in (m + 1)..3 {
                acc -= self.at(m, self.lm_col(c)) * x[c];
            }
            x[m] = acc / self.at(m, self.lm_col(m));
        }
        x
    }

    // ---- column scaling and global accumulation helpers ----

    /// Adds the squared norms of this block's Jacobian columns (observation
    /// rows only) into per-camera and per-landmark accumulators.
    pub fn accumulate_column_norms_sq(
        &self,
        cam_acc: &mut [SMatrix<T, CAMERA_DIM, 1>],
        lm_acc: &mut Vector3<T>,
    ) {
        let obs_rows = 2 * self.num_poses();
        for (g, &cam) in self.pose_indices.iter().enumerate() {
            for c in 0..CAMERA_DIM {
                let mut s = T::zero();
                for row in 0..obs_rows {
                    let v = self.at(row, CAMERA_DIM * g + c);
                    s += v * v;
                }
                cam_acc[cam][c] += s;
            }
        }
        for c in 0..3 {
            let mut s = T::zero();
            for row in 0..obs_rows {
                let v = self.at(row, self.lm_col(c));
                s += v * v;
            }
            lm_acc[c] += s;
        }
    }

    /// Multiplies the pose columns by per-camera scales and the landmark
    /// columns by `lm_scale`.
    pub fn scale_columns(
        &mut self,
        cam_scales: &[SMatrix<T, CAMERA_DIM, 1>],
        lm_scale: &Vector3<T>,
    ) {
        debug_assert_eq!(self.state, BlockState::Linearized);
        let obs_rows = 2 * self.num_poses();
        for g in 0..self.num_poses() {
            let cam = self.pose_indices[g];
            for c in 0..CAMERA_DIM {
                let s = cam_scales[cam][c];
                for row in 0..obs_rows {
                    *self.at_mut(row, CAMERA_DIM * g + c) *= s;
                }
            }
        }
        for c in 0..3 {
            let s = lm_scale[c];
            for row in 0..obs_rows {
                *self.at_mut(row, self.lm_col(c)) *= s;
            }
        }
    }

    /// Adds this block's gradient contribution `J^T r` into per-camera and
    /// per-landmark accumulators. Valid in the linearized state.
    pub fn accumulate_gradient(
        &self,
        cam_acc: &mut [SMatrix<T, CAMERA_DIM, 1>],
        lm_acc: &mut Vector3<T>,
    ) {
        debug_assert_eq!(self.state, BlockState::Linearized);
        let obs_rows = 2 * self.num_poses();
        for row in 0..obs_rows {
            let r = self.at(row, self.residual_col());
            for (g, &cam) in self.pose_indices.iter().enumerate() {
                for c in 0..CAMERA_DIM {
                    cam_acc[cam][c] += self.at(row, CAMERA_DIM * g + c) * r;
                }
            }
            for c in 0..3 {
                lm_acc[c] += self.at(row, self.lm_col(c)) * r;
            }
        }
    }

    // ---- reduced-camera-system access (marginalized states) ----

    /// Row range of the square-root reduced system, `Q2^T` part including
    /// the damping rows (which are zero when undamped).
    fn reduced_row_range(&self) -> std::ops::Range<usize> {
        3..self.rows()
    }

    /// Accumulates `(Q2^T J_p)^T (Q2^T J_p) v` into `out` (both in global
    /// pose coordinates). Skipped for degenerate blocks.
    pub fn reduced_multiply_accumulate(&self, v: &[T], out: &mut [T], scratch: &mut Vec<T>) {
        debug_assert_ne!(self.state, BlockState::Linearized);
        if self.degenerate {
            return;
        }
        let range = self.reduced_row_range();
        scratch.clear();
        scratch.resize(range.len(), T::zero());
        for (g, &cam) in self.pose_indices.iter().enumerate() {
            let vbase = CAMERA_DIM * cam;
            for (wi, row) in range.clone().enumerate() {
                let row_data = self.row(row);
                let mut acc = T::zero();
                for c in 0..CAMERA_DIM {
                    acc += row_data[CAMERA_DIM * g + c] * v[vbase + c];
                }
                scratch[wi] += acc;
            }
        }
        for (g, &cam) in self.pose_indices.iter().enumerate() {
            let vbase = CAMERA_DIM * cam;
            for (wi, row) in range.clone().enumerate() {
                let row_data = self.row(row);
                let w = scratch[wi];
                for c in 0..CAMERA_DIM {
                    out[vbase + c] += row_data[CAMERA_DIM * g + c] * w;
                }
            }
        }
    }

    /// Accumulates the reduced gradient `(Q2^T J_p)^T (Q2^T r)` into `out`.
    pub fn reduced_rhs_accumulate(&self, out: &mut [T]) {
        debug_assert_ne!(self.state, BlockState::Linearized);
        if self.degenerate {
            return;
        }
        for row in self.reduced_row_range() {
            let row_data = self.row(row);
            let r = row_data[self.residual_col()];
            for (g, &cam) in self.pose_indices.iter().enumerate() {
                let vbase = CAMERA_DIM * cam;
                for c in 0..CAMERA_DIM {
                    out[vbase + c] += row_data[CAMERA_DIM * g + c] * r;
                }
            }
        }
    }

    /// Adds this block's contribution to the block-Jacobi preconditioner:
    /// for each observing camera the 9x9 Gram matrix of its column group
    /// over the reduced rows.
    pub fn preconditioner_accumulate(&self, diag: &mut [SMatrix<T, CAMERA_DIM, CAMERA_DIM>]) {
        debug_assert_ne!(self.state, BlockState::Linearized);
        if self.degenerate {
            return;
        }
        for (g, &cam) in self.pose_indices.iter().enumerate() {
            let mut gram = SMatrix::<T, CAMERA_DIM, CAMERA_DIM>::zeros();
            for row in self.reduced_row_range() {
                let row_data = self.row(row);
                let seg = &row_data[CAMERA_DIM * g..CAMERA_DIM * (g + 1)];
                for a in 0..CAMERA_DIM {
                    for b in a..CAMERA_DIM {
                        gram[(a, b)] += seg[a] * seg[b];
                    }
                }
            }
            for a in 0..CAMERA_DIM {
                for b in 0..a {
                    gram[(a, b)] = gram[(b, a)];
                }
            }
            diag[cam] += gram;
        }
    }

    // ---- dense views for oracles and cross-checks ----

    /// Dense copy of the pose-Jacobian columns over the given rows, in
    /// block-local column order.
    pub fn dense_pose_jacobian(&self, rows: std::ops::Range<usize>) -> DMatrix<T> {
        let k = self.num_poses();
        let mut m = DMatrix::zeros(rows.len(), CAMERA_DIM * k);
        for (i, row) in rows.enumerate() {
            for col in 0..CAMERA_DIM * k {
                m[(i, col)] = self.at(row, col);
            }
        }
        m
    }

    pub fn dense_landmark_jacobian(&self, rows: std::ops::Range<usize>) -> DMatrix<T> {
        let mut m = DMatrix::zeros(rows.len(), 3);
        for (i, row) in rows.enumerate() {
            for col in 0..3 {
                m[(i, col)] = self.at(row, self.lm_col(col));
            }
        }
        m
    }

    pub fn residual_vector(&self, rows: std::ops::Range<usize>) -> DVector<T> {
        let mut v = DVector::zeros(rows.len());
        for (i, row) in rows.enumerate() {
            v[i] = self.at(row, self.residual_col());
        }
        v
    }

    /// All observation rows (the `2k x (9k+4)` linearized storage).
    pub fn observation_rows(&self) -> std::ops::Range<usize> {
        0..2 * self.num_poses()
    }

    /// All rows including damping rows.
    pub fn all_rows(&self) -> std::ops::Range<usize> {
        0..self.rows()
    }

    /// Rows of the back-substitution part `[Q1^T J_p | R1 | Q1^T r]`.
    pub fn backsub_rows(&self) -> std::ops::Range<usize> {
        0..3
    }

    /// Rows of the reduced part `[Q2^T J_p | 0 | Q2^T r]`.
    pub fn reduced_rows(&self) -> std::ops::Range<usize> {
        self.reduced_row_range()
    }

    /// Maximum absolute difference of the stored matrices, for round-trip
    /// checks.
    pub fn max_abs_difference(&self, other: &Self) -> T {
        assert_eq!(self.data.len(), other.data.len());
        let mut m = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            m = m.max((*a - *b).abs());
        }
        m
    }

    pub fn max_abs_entry(&self) -> T {
        let mut m = T::zero();
        for v in &self.data {
            m = m.max(v.abs());
        }
        m
    }
}

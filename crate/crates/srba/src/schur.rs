//! Explicit Schur-complement baseline.
//!
//! Assembles the normal-equation blocks `H_pp`, `H_pl`, `H_ll`, `b_p`, `b_l`
//! from the shared linearization, forms the reduced camera system
//! `H~pp = H_pp - H_pl H_ll^{-1} H_lp` explicitly as a block-sparse matrix
//! over the camera co-visibility graph, and recovers landmark increments by
//! back substitution. Changing the damping recomputes the reduction from
//! the stored Hessian blocks; unlike the square-root path there is no cheap
//! damping update.

use crate::block::{LandmarkBlock, DAMPING_CLAMP};
use crate::camera::CAMERA_DIM;
use crate::math::Scalar;
use crate::reduced::{BlockJacobiPreconditioner, IndefinitePreconditioner, LinearOperator};
use nalgebra::{Cholesky, DMatrix, SMatrix, Vector3};
use std::collections::HashMap;
use thiserror::Error;

type CamBlock<T> = SMatrix<T, CAMERA_DIM, CAMERA_DIM>;
type CouplingBlock<T> = SMatrix<T, CAMERA_DIM, 3>;
type LmBlock<T> = SMatrix<T, 3, 3>;
type CamVector<T> = SMatrix<T, CAMERA_DIM, 1>;

#[derive(Debug, Error)]
pub enum SchurError {
    #[error("damped landmark Hessian block {landmark} is singular")]
    SingularLandmark { landmark: usize },
}

/// Sparsity pattern of the reduced camera system: one 9x9 block per camera
/// pair `(i, j)` with `i <= j` sharing at least one landmark. Built once per
/// problem; the pattern is fixed during the optimization.
#[derive(Debug, Clone)]
pub struct CameraPairPattern {
    n_cameras: usize,
    pairs: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl CameraPairPattern {
    /// Builds the pattern from per-landmark lists of observing cameras
    /// (each list sorted ascending).
    pub fn new(n_cameras: usize, landmark_cameras: impl Iterator<Item = Vec<usize>>) -> Self {
        let mut index = HashMap::new();
        let mut pairs = Vec::new();
        for cam in 0..n_cameras {
            index.insert((cam, cam), pairs.len());
            pairs.push((cam, cam));
        }
        for cams in landmark_cameras {
            for (a, &cam_a) in cams.iter().enumerate() {
                for &cam_b in &cams[a..] {
                    let key = if cam_a <= cam_b { (cam_a, cam_b) } else { (cam_b, cam_a) };
                    index.entry(key).or_insert_with(|| {
                        pairs.push(key);
                        pairs.len() - 1
                    });
                }
            }
        }
        Self {
            n_cameras,
            pairs,
            index,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn offset(&self, cam_a: usize, cam_b: usize) -> usize {
        let key = if cam_a <= cam_b { (cam_a, cam_b) } else { (cam_b, cam_a) };
        self.index[&key]
    }
}

/// Normal-equation blocks of the damped linearized problem (undamped here;
/// damping diagonals are stored separately and applied during reduction).
#[derive(Debug, Clone)]
pub struct HessianBlocks<T: Scalar> {
    pub n_cameras: usize,
    pub h_pp: Vec<CamBlock<T>>,
    /// Per landmark: `(camera, J_cam^T J_lm)` in ascending camera order.
    pub h_pl: Vec<Vec<(usize, CouplingBlock<T>)>>,
    pub h_ll: Vec<LmBlock<T>>,
    pub b_p: Vec<CamVector<T>>,
    pub b_l: Vec<Vector3<T>>,
    /// Squared pose damping scales `diag(J_p^T J_p)`, clamped from below.
    pub pose_damping_sq: Vec<T>,
    /// Squared landmark damping scales `diag(J_l^T J_l)`, clamped.
    pub landmark_damping_sq: Vec<Vector3<T>>,
}

/// Accumulates the Hessian blocks from linearized landmark blocks
/// (`H_pp = J_p^T J_p` and friends, with IRLS weights already folded into
/// the stored Jacobians).
pub fn assemble_hessian<T: Scalar>(
    blocks: &[LandmarkBlock<T>],
    n_cameras: usize,
    n_landmarks: usize,
) -> HessianBlocks<T> {
    let mut h = HessianBlocks {
        n_cameras,
        h_pp: vec![CamBlock::zeros(); n_cameras],
        h_pl: vec![Vec::new(); n_landmarks],
        h_ll: vec![LmBlock::zeros(); n_landmarks],
        b_p: vec![CamVector::zeros(); n_cameras],
        b_l: vec![Vector3::zeros(); n_landmarks],
        pose_damping_sq: vec![T::zero(); CAMERA_DIM * n_cameras],
        landmark_damping_sq: vec![Vector3::zeros(); n_landmarks],
    };

    for block in blocks {
        let j = block.landmark_index();
        for (g, &cam) in block.pose_indices().iter().enumerate() {
            let mut j_cam = SMatrix::<T, 2, CAMERA_DIM>::zeros();
            let mut j_lm = SMatrix::<T, 2, 3>::zeros();
            let mut r = SMatrix::<T, 2, 1>::zeros();
            for row in 0..2 {
                for c in 0..CAMERA_DIM {
                    j_cam[(row, c)] = block.at(2 * g + row, CAMERA_DIM * g + c);
                }
                for c in 0..3 {
                    j_lm[(row, c)] = block.at(2 * g + row, CAMERA_DIM * block.num_poses() + c);
                }
                r[row] = block.at(2 * g + row, CAMERA_DIM * block.num_poses() + 3);
            }
            h.h_pp[cam] += j_cam.transpose() * j_cam;
            h.h_ll[j] += j_lm.transpose() * j_lm;
            h.h_pl[j].push((cam, j_cam.transpose() * j_lm));
            h.b_p[cam] += j_cam.transpose() * r;
            h.b_l[j] += j_lm.transpose() * r;
        }
    }

    let clamp = T::from_double(DAMPING_CLAMP);
    for cam in 0..n_cameras {
        for c in 0..CAMERA_DIM {
            h.pose_damping_sq[CAMERA_DIM * cam + c] = h.h_pp[cam][(c, c)].max(clamp);
        }
    }
    for j in 0..n_landmarks {
        for c in 0..3 {
            h.landmark_damping_sq[j][c] = h.h_ll[j][(c, c)].max(clamp);
        }
    }
    h
}

/// Explicit block-sparse reduced camera system `H~pp (-dx_p) = b~p`, with
/// the pose damping already on the diagonal.
#[derive(Debug, Clone)]
pub struct ReducedHessian<T: Scalar> {
    pattern: CameraPairPattern,
    blocks: Vec<CamBlock<T>>,
    rhs: Vec<T>,
}

impl<T: Scalar> ReducedHessian<T> {
    pub fn rhs(&self) -> &[T] {
        &self.rhs
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.pattern.n_cameras
    }

    /// Block-Jacobi preconditioner from the diagonal blocks, the same
    /// matrix the square-root path assembles from its landmark blocks.
    pub fn block_jacobi(&self) -> Result<BlockJacobiPreconditioner<T>, IndefinitePreconditioner> {
        let mut inverse_blocks = Vec::with_capacity(self.pattern.n_cameras);
        for cam in 0..self.pattern.n_cameras {
            let diag = self.blocks[self.pattern.offset(cam, cam)];
            match Cholesky::new(diag) {
                Some(chol) => inverse_blocks.push(chol.inverse()),
                None => return Err(IndefinitePreconditioner { camera: cam }),
            }
        }
        Ok(BlockJacobiPreconditioner::from_inverse_blocks(inverse_blocks))
    }

    /// True if any diagonal block fails its Cholesky factorization, the
    /// cheap indefiniteness probe that triggers LM backtracking. Negative
    /// curvature discovered inside CG is reported separately.
    pub fn detect_indefinite(&self) -> bool {
        (0..self.pattern.n_cameras).any(|cam| {
            Cholesky::new(self.blocks[self.pattern.offset(cam, cam)]).is_none()
        })
    }

    /// Dense copy for oracles and equivalence reports.
    pub fn dense(&self) -> DMatrix<T> {
        let n = CAMERA_DIM * self.pattern.n_cameras;
        let mut m = DMatrix::zeros(n, n);
        for (&(cam_a, cam_b), &offset) in &self.pattern.index {
            let block = &self.blocks[offset];
            for a in 0..CAMERA_DIM {
                for b in 0..CAMERA_DIM {
                    m[(CAMERA_DIM * cam_a + a, CAMERA_DIM * cam_b + b)] = block[(a, b)];
                    m[(CAMERA_DIM * cam_b + b, CAMERA_DIM * cam_a + a)] = block[(a, b)];
                }
            }
        }
        m
    }
}

impl<T: Scalar> LinearOperator<T> for ReducedHessian<T> {
    fn dim(&self) -> usize {
        CAMERA_DIM * self.pattern.n_cameras
    }

    fn apply(&self, v: &[T], out: &mut [T]) {
        for o in out.iter_mut() {
            *o = T::zero();
        }
        for (pair_idx, &(cam_a, cam_b)) in self.pattern.pairs.iter().enumerate() {
            let block = &self.blocks[pair_idx];
            let va = CamVector::from_column_slice(&v[CAMERA_DIM * cam_a..CAMERA_DIM * (cam_a + 1)]);
            let vb = CamVector::from_column_slice(&v[CAMERA_DIM * cam_b..CAMERA_DIM * (cam_b + 1)]);
            let ya = block * vb;
            for c in 0..CAMERA_DIM {
                out[CAMERA_DIM * cam_a + c] += ya[c];
            }
            if cam_a != cam_b {
                let yb = block.transpose() * va;
                for c in 0..CAMERA_DIM {
                    out[CAMERA_DIM * cam_b + c] += yb[c];
                }
            }
        }
    }
}

fn damped_landmark_inverse<T: Scalar>(
    h: &HessianBlocks<T>,
    landmark: usize,
    lambda: T,
) -> Result<LmBlock<T>, SchurError> {
    let mut h_ll = h.h_ll[landmark];
    for c in 0..3 {
        h_ll[(c, c)] += lambda * h.landmark_damping_sq[landmark][c];
    }
    Cholesky::new(h_ll)
        .map(|chol| chol.inverse())
        .ok_or(SchurError::SingularLandmark { landmark })
}

/// Forms the explicit reduced system
/// `H~pp = H_pp + lambda D_p^2 - H_pl (H_ll + lambda D_l^2)^{-1} H_lp` and
/// `b~p = b_p - H_pl (H_ll + lambda D_l^2)^{-1} b_l`.
pub fn schur_reduce<T: Scalar>(
    h: &HessianBlocks<T>,
    lambda: T,
    pattern: &CameraPairPattern,
) -> Result<ReducedHessian<T>, SchurError> {
    let mut blocks = vec![CamBlock::zeros(); pattern.num_pairs()];
    let mut rhs = vec![T::zero(); CAMERA_DIM * h.n_cameras];

    for cam in 0..h.n_cameras {
        let mut diag = h.h_pp[cam];
        for c in 0..CAMERA_DIM {
            diag[(c, c)] += lambda * h.pose_damping_sq[CAMERA_DIM * cam + c];
        }
        blocks[pattern.offset(cam, cam)] = diag;
        for c in 0..CAMERA_DIM {
            rhs[CAMERA_DIM * cam + c] = h.b_p[cam][c];
        }
    }

    for (j, coupling) in h.h_pl.iter().enumerate() {
        let inv = damped_landmark_inverse(h, j, lambda)?;
        let weighted: Vec<(usize, CouplingBlock<T>)> = coupling
            .iter()
            .map(|(cam, block)| (*cam, block * inv))
            .collect();
        for (a, (cam_a, w_a)) in weighted.iter().enumerate() {
            let contrib = w_a * h.b_l[j];
            for c in 0..CAMERA_DIM {
                rhs[CAMERA_DIM * cam_a + c] -= contrib[c];
            }
            for (cam_b, block_b) in &coupling[a..] {
                // Coupling lists are camera-sorted, so cam_a <= cam_b and
                // the update lands on the stored (min, max) block directly.
                debug_assert!(cam_a <= cam_b);
                blocks[pattern.offset(*cam_a, *cam_b)] -= w_a * block_b.transpose();
            }
        }
    }

    Ok(ReducedHessian {
        pattern: pattern.clone(),
        blocks,
        rhs,
    })
}

/// Landmark increments by back substitution:
/// `dx_l = -(H_ll + lambda D_l^2)^{-1} (b_l + H_lp dx_p)`.
pub fn sc_back_substitute<T: Scalar>(
    h: &HessianBlocks<T>,
    lambda: T,
    delta_xp: &[T],
) -> Result<Vec<Vector3<T>>, SchurError> {
    let mut out = Vec::with_capacity(h.h_ll.len());
    for j in 0..h.h_ll.len() {
        let inv = damped_landmark_inverse(h, j, lambda)?;
        let mut rhs = h.b_l[j];
        for (cam, block) in &h.h_pl[j] {
            let dx = CamVector::from_column_slice(&delta_xp[CAMERA_DIM * cam..CAMERA_DIM * (cam + 1)]);
            rhs += block.transpose() * dx;
        }
        out.push(-(inv * rhs));
    }
    Ok(out)
}

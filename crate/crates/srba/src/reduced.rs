//! Reduced camera system: column scaling, block-Jacobi preconditioning and
//! preconditioned conjugate gradients on the normal equations.
//!
//! The reduced system matrix is never formed. Its product with a vector is
//! assembled from the marginalized landmark blocks,
//! `H~pp v = (Q2^T J_p)^T (Q2^T J_p v) + lambda D_p^2 v`,
//! with a fixed-order chunked reduction so results are bitwise reproducible
//! independent of the number of worker threads.

use crate::block::LandmarkBlock;
use crate::camera::CAMERA_DIM;
use crate::math::Scalar;
use nalgebra::{Cholesky, SMatrix, Vector3};
use rayon::prelude::*;

/// Blocks per reduction chunk. The chunk boundaries, not the thread count,
/// define the summation tree.
const REDUCE_CHUNK: usize = 256;

/// Per-column scale factors `1 / (1 + |column|)` of the full Jacobian.
#[derive(Debug, Clone)]
pub struct ColumnScaling<T: Scalar> {
    pub camera: Vec<SMatrix<T, CAMERA_DIM, 1>>,
    pub landmark: Vec<Vector3<T>>,
}

/// Computes the column scaling of the full Jacobian stored in `blocks`.
///
/// The guarded formula `1 / (1 + |col|)` maps zero columns to scale 1 and
/// bounds every scaled column norm by 1.
pub fn compute_column_scaling<T: Scalar>(
    blocks: &[LandmarkBlock<T>],
    n_cameras: usize,
    n_landmarks: usize,
) -> ColumnScaling<T> {
    let mut cam_sq = vec![SMatrix::<T, CAMERA_DIM, 1>::zeros(); n_cameras];
    let mut lm_sq = vec![Vector3::<T>::zeros(); n_landmarks];
    for block in blocks {
        block.accumulate_column_norms_sq(&mut cam_sq, &mut lm_sq[block.landmark_index()]);
    }
    let one = T::one();
    ColumnScaling {
        camera: cam_sq
            .into_iter()
            .map(|v| v.map(|s| one / (one + s.sqrt())))
            .collect(),
        landmark: lm_sq
            .into_iter()
            .map(|v| v.map(|s| one / (one + s.sqrt())))
            .collect(),
    }
}

/// Computes the column scaling and applies it in place to all blocks.
pub fn scale_columns<T: Scalar>(
    blocks: &mut [LandmarkBlock<T>],
    n_cameras: usize,
    n_landmarks: usize,
) -> ColumnScaling<T> {
    let scaling = compute_column_scaling(blocks, n_cameras, n_landmarks);
    blocks.par_iter_mut().for_each(|block| {
        let lm_scale = scaling.landmark[block.landmark_index()];
        block.scale_columns(&scaling.camera, &lm_scale);
    });
    scaling
}

/// Matrix-free symmetric positive (semi-)definite operator.
pub trait LinearOperator<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[T], out: &mut [T]);
}

pub trait Preconditioner<T: Scalar>: Sync {
    fn apply(&self, r: &[T], z: &mut [T]);
}

/// Identity preconditioner, mainly for tests and small synthetic systems.
pub struct IdentityPreconditioner;

impl<T: Scalar> Preconditioner<T> for IdentityPreconditioner {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

/// Inverted 9x9 diagonal blocks of the reduced system matrix.
pub struct BlockJacobiPreconditioner<T: Scalar> {
    inverse_blocks: Vec<SMatrix<T, CAMERA_DIM, CAMERA_DIM>>,
}

#[derive(Debug, thiserror::Error)]
#[error("preconditioner block for camera {camera} is not positive definite")]
pub struct IndefinitePreconditioner {
    pub camera: usize,
}

/// Assembles and inverts the block-Jacobi preconditioner
/// `P_i = sum_j (Q2^T J_p)_i^T (Q2^T J_p)_i + lambda D_p,i^2`.
///
/// A failed Cholesky factorization reports the system as indefinite, which
/// the optimizer treats as a rejected step.
pub fn compute_preconditioner<T: Scalar>(
    blocks: &[LandmarkBlock<T>],
    lambda: T,
    pose_damping_sq: &[T],
    n_cameras: usize,
) -> Result<BlockJacobiPreconditioner<T>, IndefinitePreconditioner> {
    debug_assert_eq!(pose_damping_sq.len(), CAMERA_DIM * n_cameras);
    let zero_acc = || vec![SMatrix::<T, CAMERA_DIM, CAMERA_DIM>::zeros(); n_cameras];
    let partials: Vec<_> = blocks
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = zero_acc();
            for block in chunk {
                block.preconditioner_accumulate(&mut acc);
            }
            acc
        })
        .collect();
    let mut diag = zero_acc();
    for partial in partials {
        for (d, p) in diag.iter_mut().zip(partial) {
            *d += p;
        }
    }

    let mut inverse_blocks = Vec::with_capacity(n_cameras);
    for (cam, mut p) in diag.into_iter().enumerate() {
        for c in 0..CAMERA_DIM {
            p[(c, c)] += lambda * pose_damping_sq[CAMERA_DIM * cam + c];
        }
        match Cholesky::new(p) {
            Some(chol) => inverse_blocks.push(chol.inverse()),
            None => return Err(IndefinitePreconditioner { camera: cam }),
        }
    }
    Ok(BlockJacobiPreconditioner { inverse_blocks })
}

impl<T: Scalar> BlockJacobiPreconditioner<T> {
    pub fn from_inverse_blocks(inverse_blocks: Vec<SMatrix<T, CAMERA_DIM, CAMERA_DIM>>) -> Self {
        Self { inverse_blocks }
    }

    pub fn num_blocks(&self) -> usize {
        self.inverse_blocks.len()
    }

    pub fn inverse_block(&self, camera: usize) -> &SMatrix<T, CAMERA_DIM, CAMERA_DIM> {
        &self.inverse_blocks[camera]
    }
}

impl<T: Scalar> Preconditioner<T> for BlockJacobiPreconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        for (cam, inv) in self.inverse_blocks.iter().enumerate() {
            let base = CAMERA_DIM * cam;
            let rv = SMatrix::<T, CAMERA_DIM, 1>::from_column_slice(&r[base..base + CAMERA_DIM]);
            let zv = inv * rv;
            z[base..base + CAMERA_DIM].copy_from_slice(zv.as_slice());
        }
    }
}

/// The reduced camera system held implicitly in the landmark blocks, plus
/// the pose damping diagonal.
pub struct ReducedCameraSystem<'a, T: Scalar> {
    blocks: &'a [LandmarkBlock<T>],
    lambda: T,
    pose_damping_sq: &'a [T],
}

impl<'a, T: Scalar> ReducedCameraSystem<'a, T> {
    pub fn new(blocks: &'a [LandmarkBlock<T>], lambda: T, pose_damping_sq: &'a [T]) -> Self {
        Self {
            blocks,
            lambda,
            pose_damping_sq,
        }
    }

    /// The reduced gradient `b~p = sum_j (Q2^T J_p)^T (Q2^T r)`.
    pub fn rhs(&self) -> Vec<T> {
        let n = self.dim();
        let partials: Vec<Vec<T>> = self
            .blocks
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut acc = vec![T::zero(); n];
                for block in chunk {
                    block.reduced_rhs_accumulate(&mut acc);
                }
                acc
            })
            .collect();
        let mut out = vec![T::zero(); n];
        for partial in partials {
            for (o, p) in out.iter_mut().zip(partial) {
                *o += p;
            }
        }
        out
    }
}

impl<T: Scalar> LinearOperator<T> for ReducedCameraSystem<'_, T> {
    fn dim(&self) -> usize {
        self.pose_damping_sq.len()
    }

    fn apply(&self, v: &[T], out: &mut [T]) {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        let partials: Vec<Vec<T>> = self
            .blocks
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut acc = vec![T::zero(); n];
                let mut scratch = Vec::new();
                for block in chunk {
                    block.reduced_multiply_accumulate(v, &mut acc, &mut scratch);
                }
                acc
            })
            .collect();
        for o in out.iter_mut() {
            *o = T::zero();
        }
        for partial in partials {
            for (o, p) in out.iter_mut().zip(partial) {
                *o += p;
            }
        }
        for i in 0..n {
            out[i] += self.lambda * self.pose_damping_sq[i] * v[i];
        }
    }
}

/// Convenience for oracles: multiply the implicit reduced matrix with `v`.
pub fn multiply_hpp<T: Scalar>(
    blocks: &[LandmarkBlock<T>],
    lambda: T,
    pose_damping_sq: &[T],
    v: &[T],
) -> Vec<T> {
    let system = ReducedCameraSystem::new(blocks, lambda, pose_damping_sq);
    let mut out = vec![T::zero(); system.dim()];
    system.apply(v, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgTermination {
    Tolerance,
    MaxIterations,
    Indefinite,
}

/// Statistics of one conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgStats {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub termination: CgTermination,
    /// Preconditioned residual norm after each iteration, starting with the
    /// initial one.
    pub residual_history: Vec<f64>,
}

/// Preconditioned conjugate gradients with zero initial guess.
///
/// Terminates when the preconditioned residual norm drops below
/// `forcing_tolerance` times its initial value, when `max_iterations` is
/// reached, or when negative curvature `p^T H p <= 0` reveals an indefinite
/// system.
pub fn solve_pcg<T: Scalar>(
    op: &dyn LinearOperator<T>,
    precond: &dyn Preconditioner<T>,
    rhs: &[T],
    forcing_tolerance: f64,
    max_iterations: usize,
) -> (Vec<T>, CgStats) {
    let n = op.dim();
    debug_assert_eq!(rhs.len(), n);
    let mut x = vec![T::zero(); n];
    let mut r = rhs.to_vec();
    let mut z = vec![T::zero(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut hp = vec![T::zero(); n];

    let dot = |a: &[T], b: &[T]| -> T {
        let mut acc = T::zero();
        for (x, y) in a.iter().zip(b) {
            acc += *x * *y;
        }
        acc
    };

    let mut rz = dot(&r, &z);
    let initial_residual = rz.max(T::zero()).sqrt().to_double();
    let mut history = vec![initial_residual];
    if initial_residual == 0.0 {
        return (
            x,
            CgStats {
                iterations: 0,
                final_relative_residual: 0.0,
                termination: CgTermination::Tolerance,
                residual_history: history,
            },
        );
    }
    let target = forcing_tolerance * initial_residual;

    let mut iterations = 0;
    let mut termination = CgTermination::MaxIterations;
    while iterations < max_iterations {
        op.apply(&p, &mut hp);
        let php = dot(&p, &hp);
        if php <= T::zero() {
            termination = CgTermination::Indefinite;
            break;
        }
        let alpha = rz / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        iterations += 1;

        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let residual = rz_new.max(T::zero()).sqrt().to_double();
        history.push(residual);
        if residual <= target {
            termination = CgTermination::Tolerance;
            break;
        }
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }

    let final_relative_residual = history.last().unwrap() / initial_residual;
    (
        x,
        CgStats {
            iterations,
            final_relative_residual,
            termination,
            residual_history: history,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::MarginalizationMethod;
    use crate::testutil;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    struct DenseOperator {
        m: DMatrix<f64>,
    }

    impl LinearOperator<f64> for DenseOperator {
        fn dim(&self) -> usize {
            self.m.nrows()
        }
        fn apply(&self, v: &[f64], out: &mut [f64]) {
            let r = &self.m * DVector::from_column_slice(v);
            out.copy_from_slice(r.as_slice());
        }
    }

    #[test]
    fn scaling_formula() {
        // Build one block whose first pose column has norm 3 and force a
        // zero column elsewhere.
        let k = 2;
        let mut jp = DMatrix::zeros(2 * k, CAMERA_DIM * k);
        jp[(0, 0)] = 3.0; // column norm 3 -> scale 1/4
        jp[(1, 1)] = 1.0;
        jp[(2, 9)] = 2.0;
        let jl = DMatrix::from_fn(2 * k, 3, |r, c| if r == c { 1.0 } else { 0.1 });
        let r = DVector::zeros(2 * k);
        let block = crate::block::LandmarkBlock::from_parts(0, vec![0, 1], &jp, &jl, &r);
        let scaling = compute_column_scaling(&[block], 2, 1);
        assert_relative_eq!(scaling.camera[0][0], 0.25);
        assert_relative_eq!(scaling.camera[0][1], 0.5);
        assert_relative_eq!(scaling.camera[0][2], 1.0, epsilon = 1e-15); // zero column
        assert_relative_eq!(scaling.camera[1][0], 1.0 / 3.0);
    }

    #[test]
    fn scaled_columns_have_bounded_norm() {
        let mut rng = StdRng::seed_from_u64(1);
        let (mut blocks, n_cams) = testutil::random_block_set(&mut rng, 6, 12);
        let n_lms = blocks.len();
        scale_columns(&mut blocks, n_cams, n_lms);
        let mut cam_sq = vec![nalgebra::SMatrix::<f64, CAMERA_DIM, 1>::zeros(); n_cams];
        let mut lm_sq = vec![nalgebra::Vector3::<f64>::zeros(); n_lms];
        for block in &blocks {
            block.accumulate_column_norms_sq(&mut cam_sq, &mut lm_sq[block.landmark_index()]);
        }
        for v in &cam_sq {
            for c in 0..CAMERA_DIM {
                assert!(v[c].sqrt() <= 1.0 + 1e-12);
            }
        }
        for v in &lm_sq {
            for c in 0..3 {
                assert!(v[c].sqrt() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn preconditioner_single_block_single_summand() {
        let mut rng = StdRng::seed_from_u64(2);
        let (mut blocks, n_cams) = testutil::random_block_set(&mut rng, 3, 1);
        for b in &mut blocks {
            b.marginalize(MarginalizationMethod::Givens).unwrap();
        }
        let lambda = 0.5;
        let d_sq: Vec<f64> = (0..CAMERA_DIM * n_cams).map(|i| 0.1 + 0.01 * i as f64).collect();
        let pre = compute_preconditioner(&blocks, lambda, &d_sq, n_cams).unwrap();

        // Oracle: dense Gram of the reduced rows plus the damping diagonal.
        let block = &blocks[0];
        let q2jp = block.dense_pose_jacobian(block.reduced_rows());
        let gram = q2jp.transpose() * &q2jp;
        for (g, &cam) in block.pose_indices().iter().enumerate() {
            let mut expected = nalgebra::SMatrix::<f64, CAMERA_DIM, CAMERA_DIM>::zeros();
            for a in 0..CAMERA_DIM {
                for b in 0..CAMERA_DIM {
                    expected[(a, b)] = gram[(CAMERA_DIM * g + a, CAMERA_DIM * g + b)];
                }
            }
            for c in 0..CAMERA_DIM {
                expected[(c, c)] += lambda * d_sq[CAMERA_DIM * cam + c];
            }
            let inv = pre.inverse_block(cam);
            let product = inv * expected;
            assert!((product - nalgebra::SMatrix::<f64, CAMERA_DIM, CAMERA_DIM>::identity()).amax() < 1e-9);
        }
    }

    #[test]
    fn preconditioner_matches_dense_diagonal_blocks() {
        let mut rng = StdRng::seed_from_u64(3);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 4, 10);
        let lambda = 1e-2;
        let pre = compute_preconditioner(&blocks, lambda, &d_sq, n_cams).unwrap();
        let dense = testutil::dense_reduced_matrix(&blocks, lambda, &d_sq, n_cams);
        for cam in 0..n_cams {
            let view = dense.view((CAMERA_DIM * cam, CAMERA_DIM * cam), (CAMERA_DIM, CAMERA_DIM));
            let inv = pre.inverse_block(cam);
            let product = inv * view.clone_owned();
            assert!(
                (product - nalgebra::SMatrix::<f64, CAMERA_DIM, CAMERA_DIM>::identity()).amax()
                    < 1e-9,
                "camera {cam}"
            );
        }
    }

    #[test]
    fn preconditioner_large_lambda_limit() {
        let mut rng = StdRng::seed_from_u64(4);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 3, 6);
        let lambda = 1e12;
        let pre = compute_preconditioner(&blocks, lambda, &d_sq, n_cams).unwrap();
        for cam in 0..n_cams {
            let inv = pre.inverse_block(cam);
            // P ~ lambda D^2, so inv(P) * (lambda D^2) ~ identity.
            let mut scaled = nalgebra::SMatrix::<f64, CAMERA_DIM, CAMERA_DIM>::zeros();
            for c in 0..CAMERA_DIM {
                scaled[(c, c)] = lambda * d_sq[CAMERA_DIM * cam + c];
            }
            let product = inv * scaled;
            assert!(
                (product - nalgebra::SMatrix::<f64, CAMERA_DIM, CAMERA_DIM>::identity()).amax()
                    < 1e-6
            );
        }
    }

    #[test]
    fn multiply_zero_vector() {
        let mut rng = StdRng::seed_from_u64(5);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 3, 5);
        let v = vec![0.0; CAMERA_DIM * n_cams];
        let out = multiply_hpp(&blocks, 0.1, &d_sq, &v);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn multiply_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(6);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 4, 12);
        let lambda = 3e-3;
        let dense = testutil::dense_reduced_matrix(&blocks, lambda, &d_sq, n_cams);
        for _ in 0..5 {
            let v: Vec<f64> = (0..CAMERA_DIM * n_cams).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = multiply_hpp(&blocks, lambda, &d_sq, &v);
            let slow = &dense * DVector::from_column_slice(&v);
            for i in 0..fast.len() {
                assert_relative_eq!(fast[i], slow[i], epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn multiply_is_symmetric_and_linear() {
        let mut rng = StdRng::seed_from_u64(7);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 3, 8);
        let lambda = 1e-3;
        let n = CAMERA_DIM * n_cams;
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hu = multiply_hpp(&blocks, lambda, &d_sq, &u);
        let hv = multiply_hpp(&blocks, lambda, &d_sq, &v);
        let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
        assert_relative_eq!(uhv, vhu, max_relative = 1e-10);

        let (alpha, beta) = (0.7, -1.3);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let h_combo = multiply_hpp(&blocks, lambda, &d_sq, &combo);
        for i in 0..n {
            let expected = alpha * hu[i] + beta * hv[i];
            assert_relative_eq!(h_combo[i], expected, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn multiply_positive_definite_for_positive_lambda() {
        let mut rng = StdRng::seed_from_u64(8);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 4, 10);
        let n = CAMERA_DIM * n_cams;
        for _ in 0..20 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hv = multiply_hpp(&blocks, 1e-4, &d_sq, &v);
            let vhv: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
            assert!(vhv > 0.0, "v^T H v = {vhv}");
        }
    }

    #[test]
    fn multiply_is_deterministic_across_thread_counts() {
        let mut rng = StdRng::seed_from_u64(9);
        let (blocks, n_cams, d_sq) = testutil::random_marginalized_set(&mut rng, 5, 600);
        let n = CAMERA_DIM * n_cams;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut results = Vec::new();
        for threads in [1usize, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let out = pool.install(|| multiply_hpp(&blocks, 2e-3, &d_sq, &v));
            results.push(out);
        }
        assert_eq!(results[0], results[1], "reduction must not depend on thread count");
    }

    #[test]
    fn pcg_identity_converges_in_one_iteration() {
        let op = DenseOperator { m: DMatrix::identity(9, 9) };
        let rhs: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let (x, stats) = solve_pcg(&op, &IdentityPreconditioner, &rhs, 1e-10, 100);
        assert_eq!(stats.iterations, 1);
        assert_eq!(stats.termination, CgTermination::Tolerance);
        for (a, b) in x.iter().zip(&rhs) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pcg_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(10);
        let n = 27;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = spd
            .clone()
            .cholesky()
            .unwrap()
            .solve(&DVector::from_column_slice(&rhs));
        let op = DenseOperator { m: spd };
        let (x, stats) = solve_pcg(&op, &IdentityPreconditioner, &rhs, 1e-14, 1000);
        assert_eq!(stats.termination, CgTermination::Tolerance);
        for i in 0..n {
            assert_relative_eq!(x[i], oracle[i], epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn pcg_detects_indefinite_system() {
        let mut m = DMatrix::identity(2, 2);
        m[(1, 1)] = -1.0;
        let op = DenseOperator { m };
        let (_, stats) = solve_pcg(&op, &IdentityPreconditioner, &[0.0, 1.0], 1e-10, 10);
        assert_eq!(stats.termination, CgTermination::Indefinite);
    }

    #[test]
    fn pcg_residual_history_is_monotone_on_well_conditioned_system() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 18;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2));
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * 2.0;
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = DenseOperator { m: spd };
        let (_, stats) = solve_pcg(&op, &IdentityPreconditioner, &rhs, 1e-12, 200);
        for pair in stats.residual_history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pcg_zero_rhs_returns_zero() {
        let op = DenseOperator { m: DMatrix::identity(4, 4) };
        let (x, stats) = solve_pcg(&op, &IdentityPreconditioner, &[0.0; 4], 1e-10, 10);
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pcg_respects_iteration_cap() {
        let mut rng = StdRng::seed_from_u64(12);
        let n = 40;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * 1e-6;
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = DenseOperator { m: spd };
        let (_, stats) = solve_pcg(&op, &IdentityPreconditioner, &rhs, 1e-16, 3);
        assert_eq!(stats.iterations, 3);
        assert_eq!(stats.termination, CgTermination::MaxIterations);
    }
}

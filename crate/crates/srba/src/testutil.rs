//! Shared helpers for unit tests: random landmark blocks and dense oracles.

use crate::block::{LandmarkBlock, MarginalizationMethod};
use crate::camera::CAMERA_DIM;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random linearized block observing `k` distinct cameras out of `n_cams`.
pub fn random_block(rng: &mut StdRng, landmark_index: usize, n_cams: usize, k: usize) -> LandmarkBlock<f64> {
    assert!(k >= 2 && k <= n_cams);
    let mut cams: Vec<usize> = (0..n_cams).collect();
    cams.shuffle(rng);
    let mut pose_indices: Vec<usize> = cams.into_iter().take(k).collect();
    pose_indices.sort_unstable();

    let jp = DMatrix::from_fn(2 * k, CAMERA_DIM * k, |r, c| {
        if c / CAMERA_DIM == r / 2 {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let jl = DMatrix::from_fn(2 * k, 3, |_, _| rng.random_range(-1.0..1.0));
    let r = DVector::from_fn(2 * k, |_, _| rng.random_range(-1.0..1.0));
    LandmarkBlock::from_parts(landmark_index, pose_indices, &jp, &jl, &r)
}

/// Set of random linearized blocks that together cover all cameras.
pub fn random_block_set(rng: &mut StdRng, n_cams: usize, n_blocks: usize) -> (Vec<LandmarkBlock<f64>>, usize) {
    let blocks = (0..n_blocks)
        .map(|j| {
            let k = rng.random_range(2..=n_cams.min(6));
            random_block(rng, j, n_cams, k)
        })
        .collect();
    (blocks, n_cams)
}

/// Random marginalized blocks plus a positive pose-damping diagonal
/// (squared) computed from the pose-Jacobian column norms.
pub fn random_marginalized_set(
    rng: &mut StdRng,
    n_cams: usize,
    n_blocks: usize,
) -> (Vec<LandmarkBlock<f64>>, usize, Vec<f64>) {
    let (mut blocks, _) = random_block_set(rng, n_cams, n_blocks);
    let mut cam_sq = vec![nalgebra::SMatrix::<f64, CAMERA_DIM, 1>::zeros(); n_cams];
    let mut lm_sq = vec![nalgebra::Vector3::<f64>::zeros(); n_blocks];
    for block in &blocks {
        block.accumulate_column_norms_sq(&mut cam_sq, &mut lm_sq[block.landmark_index()]);
    }
    let d_sq: Vec<f64> = cam_sq
        .iter()
        .flat_map(|v| v.iter().map(|s| s.max(crate::block::DAMPING_CLAMP)).collect::<Vec<_>>())
        .collect();
    for block in &mut blocks {
        block.marginalize(MarginalizationMethod::Givens).unwrap();
    }
    (blocks, n_cams, d_sq)
}

/// Dense reduced camera matrix assembled from marginalized blocks:
/// `sum_j scatter((Q2^T J_p)^T (Q2^T J_p)) + lambda diag(d_sq)`.
pub fn dense_reduced_matrix(
    blocks: &[LandmarkBlock<f64>],
    lambda: f64,
    d_sq: &[f64],
    n_cams: usize,
) -> DMatrix<f64> {
    let n = CAMERA_DIM * n_cams;
    let mut h = DMatrix::zeros(n, n);
    for block in blocks {
        if block.is_degenerate() {
            continue;
        }
        let q2jp = block.dense_pose_jacobian(block.reduced_rows());
        let gram = q2jp.transpose() * &q2jp;
        for (ga, &cam_a) in block.pose_indices().iter().enumerate() {
            for (gb, &cam_b) in block.pose_indices().iter().enumerate() {
                for a in 0..CAMERA_DIM {
                    for b in 0..CAMERA_DIM {
                        h[(CAMERA_DIM * cam_a + a, CAMERA_DIM * cam_b + b)] +=
                            gram[(CAMERA_DIM * ga + a, CAMERA_DIM * gb + b)];
                    }
                }
            }
        }
    }
    for i in 0..n {
        h[(i, i)] += lambda * d_sq[i];
    }
    h
}

/// Dense reduced gradient assembled from marginalized blocks.
pub fn dense_reduced_rhs(blocks: &[LandmarkBlock<f64>], n_cams: usize) -> DVector<f64> {
    let n = CAMERA_DIM * n_cams;
    let mut b = DVector::zeros(n);
    for block in blocks {
        if block.is_degenerate() {
            continue;
        }
        let q2jp = block.dense_pose_jacobian(block.reduced_rows());
        let q2r = block.residual_vector(block.reduced_rows());
        let contrib = q2jp.transpose() * q2r;
        for (g, &cam) in block.pose_indices().iter().enumerate() {
            for c in 0..CAMERA_DIM {
                b[CAMERA_DIM * cam + c] += contrib[CAMERA_DIM * g + c];
            }
        }
    }
    b
}

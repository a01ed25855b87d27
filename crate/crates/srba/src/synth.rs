//! Deterministic synthetic bundle adjustment problems.
//!
//! The generator builds a ring of cameras looking at a central landmark
//! cloud, projects ground-truth landmarks to obtain pixel observations with
//! Gaussian noise, and writes standard BAL problems. Observation counts per
//! landmark can be shaped to hit an exact total, an exact maximum and a
//! target standard deviation, which lets benchmark-sized stand-ins
//! reproduce the size statistics of well-known BAL instances when the real
//! downloads are unavailable.

use crate::bal::{BaProblem, Observation};
use crate::camera::CameraParams;
use crate::math::angle_axis_from_matrix;
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// How landmarks choose their observing cameras.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    /// Contiguous camera windows, like a camera moving along a trajectory.
    Local,
    /// Arbitrary camera subsets, like unordered photo collections.
    Global,
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub n_cameras: usize,
    pub n_landmarks: usize,
    pub n_observations: usize,
    pub max_obs_per_landmark: usize,
    /// Target standard deviation of observations per landmark, in tenths
    /// (33 means the generated std rounds to 3.3). `None` leaves the
    /// distribution unshaped.
    pub target_std_tenths: Option<u32>,
    pub visibility: Visibility,
    /// Standard deviation of the pixel noise on observations.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn small_random(n_cameras: usize, n_landmarks: usize, max_obs: usize, seed: u64) -> Self {
        // Aim for an average of about 3 observations per landmark without
        // exceeding the requested maximum.
        let per_landmark = max_obs.min(n_cameras).max(2);
        let n_observations = n_landmarks * (2 + (per_landmark - 2) / 2);
        Self {
            n_cameras,
            n_landmarks,
            n_observations,
            max_obs_per_landmark: per_landmark,
            target_std_tenths: None,
            visibility: Visibility::Global,
            pixel_noise: 1.0,
            seed,
        }
    }
}

/// Benchmark-sized presets mirroring the published size statistics
/// (cameras, landmarks, observations, max and std of observations per
/// landmark) of the corresponding BAL instances.
pub fn preset(name: &str) -> Option<SceneConfig> {
    let config = match name {
        "ladybug49" => SceneConfig {
            n_cameras: 49,
            n_landmarks: 7766,
            n_observations: 31812,
            max_obs_per_landmark: 29,
            target_std_tenths: Some(33),
            visibility: Visibility::Local,
            pixel_noise: 1.0,
            seed: 49,
        },
        "trafalgar21" => SceneConfig {
            n_cameras: 21,
            n_landmarks: 11315,
            n_observations: 36455,
            max_obs_per_landmark: 15,
            target_std_tenths: Some(18),
            visibility: Visibility::Global,
            pixel_noise: 1.0,
            seed: 21,
        },
        "dubrovnik16" => SceneConfig {
            n_cameras: 16,
            n_landmarks: 22106,
            n_observations: 83718,
            max_obs_per_landmark: 14,
            target_std_tenths: Some(22),
            visibility: Visibility::Global,
            pixel_noise: 1.0,
            seed: 16,
        },
        _ => return None,
    };
    Some(config)
}

pub const PRESET_NAMES: [&str; 3] = ["ladybug49", "trafalgar21", "dubrovnik16"];

/// Draws the per-landmark observation counts: exact sum, exact maximum,
/// minimum two, and optionally a target standard deviation.
fn observation_counts(config: &SceneConfig, rng: &mut StdRng) -> Vec<usize> {
    let n = config.n_landmarks;
    let max_k = config.max_obs_per_landmark.min(config.n_cameras);
    let total = config.n_observations;
    assert!(total >= 2 * n, "need at least two observations per landmark");
    assert!(total <= n * max_k, "observation budget exceeds the per-landmark cap");

    let mut counts = vec![2usize; n];
    let mut budget = total - 2 * n;

    let shaped = config.target_std_tenths.is_some() && n > 1;
    if shaped {
        // Pin landmark 0 at the maximum; it is excluded from donor moves so
        // the maximum stays exact.
        let boost = (max_k - 2).min(budget);
        counts[0] += boost;
        budget -= boost;
    }
    while budget > 0 {
        let j = rng.random_range(0..n);
        if counts[j] < max_k {
            counts[j] += 1;
            budget -= 1;
        }
    }

    if let Some(tenths) = config.target_std_tenths {
        shape_std(&mut counts, max_k, tenths, rng);
    }
    counts
}

/// Moves single observations between landmarks (preserving the total, the
/// minimum of two and the pinned maximum) until the population standard
/// deviation rounds to `tenths / 10`.
fn shape_std(counts: &mut [usize], max_k: usize, tenths: u32, rng: &mut StdRng) {
    let n = counts.len() as f64;
    let sum: usize = counts.iter().sum();
    let mean = sum as f64 / n;
    let mut sum_sq: f64 = counts.iter().map(|&k| (k * k) as f64).sum();
    let target = tenths as f64 / 10.0;
    let std_of = |sum_sq: f64| ((sum_sq / n) - mean * mean).max(0.0).sqrt();

    for _ in 0..2_000_000 {
        let std = std_of(sum_sq);
        if (std - target).abs() <= 0.02 {
            break;
        }
        // Transfer one observation; donor/receiver choice drives the
        // variance up or down. Candidate sampling keeps it O(1).
        let mut best_large = None;
        let mut best_small = None;
        for _ in 0..12 {
            let j = rng.random_range(1..counts.len());
            let k = counts[j];
            if k < max_k && best_large.map(|(_, kb)| k > kb).unwrap_or(true) {
                best_large = Some((j, k));
            }
            if k > 2 && best_small.map(|(_, kb)| k < kb).unwrap_or(true) {
                best_small = Some((j, k));
            }
        }
        let (donor, receiver) = if std < target {
            // Spread: take from a small landmark, give to a large one.
            match (best_small, best_large) {
                (Some((a, ka)), Some((b, kb))) if a != b && ka > 2 && kb < max_k && kb >= ka => (a, b),
                _ => continue,
            }
        } else {
            match (best_large, best_small) {
                (Some((b, kb)), Some((a, ka))) if a != b && kb > 2 && ka < max_k && kb > ka => (b, a),
                _ => continue,
            }
        };
        let (kd, kr) = (counts[donor] as f64, counts[receiver] as f64);
        counts[donor] -= 1;
        counts[receiver] += 1;
        sum_sq += 2.0 * (kr - kd) + 2.0;
    }
}

/// Picks `k` distinct observing cameras for one landmark.
fn pick_cameras(rng: &mut StdRng, n_cameras: usize, k: usize, visibility: Visibility) -> Vec<usize> {
    match visibility {
        Visibility::Global => {
            let mut cams: Vec<usize> = (0..n_cameras).collect();
            cams.shuffle(rng);
            let mut picked: Vec<usize> = cams.into_iter().take(k).collect();
            picked.sort_unstable();
            picked
        }
        Visibility::Local => {
            let window = (k + 2 + k / 2).min(n_cameras);
            let start = rng.random_range(0..n_cameras);
            let mut candidates: Vec<usize> = (0..window).map(|i| (start + i) % n_cameras).collect();
            candidates.shuffle(rng);
            let mut picked: Vec<usize> = candidates.into_iter().take(k).collect();
            picked.sort_unstable();
            picked
        }
    }
}

/// Generates a deterministic synthetic problem.
pub fn generate(config: &SceneConfig) -> BaProblem {
    assert!(config.n_cameras >= 2);
    let mut rng = StdRng::seed_from_u64(config.seed);

    // Camera ring of radius ~10 with slight jitter, all looking at the
    // origin. The world-to-camera rotation puts the viewing direction on
    // the negative z axis.
    let mut cameras = Vec::with_capacity(config.n_cameras);
    for i in 0..config.n_cameras {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / config.n_cameras as f64;
        let radius = 10.0 + rng.random_range(-1.0..1.0);
        let center = Vector3::new(
            radius * angle.cos(),
            rng.random_range(-1.0..1.0),
            radius * angle.sin(),
        );
        let z_cam = center.normalize();
        let up = Vector3::new(0.0, 1.0, 0.0);
        let x_cam = up.cross(&z_cam).normalize();
        let y_cam = z_cam.cross(&x_cam);
        let rot = Matrix3::from_rows(&[x_cam.transpose(), y_cam.transpose(), z_cam.transpose()]);
        let rotation = angle_axis_from_matrix(&rot);
        let translation = -(rot * center);
        let focal = rng.random_range(400.0..700.0);
        let k1 = rng.random_range(-0.15..0.0);
        let k2 = rng.random_range(0.0..0.01);
        cameras.push(CameraParams::new(rotation, translation, focal, k1, k2));
    }

    let mut landmarks = Vec::with_capacity(config.n_landmarks);
    for _ in 0..config.n_landmarks {
        // Uniform in a ball of radius 4: always well in front of every
        // camera on the ring.
        loop {
            let p = Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            );
            if p.norm() <= 4.0 {
                landmarks.push(p);
                break;
            }
        }
    }

    let counts = observation_counts(config, &mut rng);
    let mut assignments: Vec<Vec<usize>> = counts
        .iter()
        .map(|&k| pick_cameras(&mut rng, config.n_cameras, k, config.visibility))
        .collect();

    // Every camera must observe something, otherwise its parameters are
    // unconstrained. Swap an over-covered camera out where needed.
    let mut camera_obs = vec![0usize; config.n_cameras];
    for cams in &assignments {
        for &c in cams {
            camera_obs[c] += 1;
        }
    }
    for cam in 0..config.n_cameras {
        if camera_obs[cam] > 0 {
            continue;
        }
        'search: for cams in assignments.iter_mut() {
            if cams.contains(&cam) {
                continue;
            }
            for slot in cams.iter_mut() {
                if camera_obs[*slot] >= 2 {
                    camera_obs[*slot] -= 1;
                    camera_obs[cam] += 1;
                    *slot = cam;
                    cams.sort_unstable();
                    break 'search;
                }
            }
        }
    }

    let mut observations = Vec::with_capacity(config.n_observations);
    for (j, cams) in assignments.iter().enumerate() {
        for &cam in cams {
            let projection = crate::camera::project(&cameras[cam], &landmarks[j])
                .expect("synthetic landmarks are in front of all cameras");
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            observations.push(Observation {
                camera_index: cam,
                landmark_index: j,
                pixel: projection + Vector2::new(nx, ny) * config.pixel_noise,
            });
        }
    }

    BaProblem::new(cameras, landmarks, observations)
}

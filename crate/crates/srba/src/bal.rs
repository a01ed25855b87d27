//! BAL-format problem ingestion and deterministic preprocessing.
//!
//! A BAL file is whitespace-separated plain text: a header line
//! `n_cameras n_landmarks n_observations`, followed by one observation per
//! line (`camera landmark x y`), then 9 numbers per camera (angle-axis
//! rotation, translation, focal, k1, k2) and 3 numbers per landmark.
//!
//! Preprocessing follows a fixed recipe so that every solver sees the
//! identical problem: gauge normalization (center the landmark cloud and
//! rescale to a median absolute deviation of 100), Gaussian perturbation of
//! landmark and camera positions with a fixed seed, and removal of
//! observations with too small viewing depth, dropping landmarks that are
//! left with fewer than two observations. All of it runs in double
//! precision regardless of the solver precision used afterwards.

use crate::camera::CameraParams;
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("camera index {index} out of range (n_cameras = {count}) at line {line}")]
    CameraIndexOutOfRange { line: usize, index: usize, count: usize },
    #[error("landmark index {index} out of range (n_landmarks = {count}) at line {line}")]
    LandmarkIndexOutOfRange { line: usize, index: usize, count: usize },
    #[error("degenerate landmark cloud (median absolute deviation is zero)")]
    DegenerateCloud,
    #[error("problem is empty after preprocessing")]
    EmptyAfterFiltering,
}

/// One pixel measurement of a landmark in a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera_index: usize,
    pub landmark_index: usize,
    pub pixel: Vector2<f64>,
}

/// A bundle adjustment problem: camera parameters, landmark positions and
/// pixel observations, with residuals grouped by landmark.
#[derive(Debug, Clone)]
pub struct BaProblem {
    pub cameras: Vec<CameraParams<f64>>,
    pub landmarks: Vec<Vector3<f64>>,
    pub observations: Vec<Observation>,
    /// Observation indices grouped per landmark, each inner list sorted by
    /// camera index.
    landmark_observations: Vec<Vec<usize>>,
}

impl BaProblem {
    pub fn new(
        cameras: Vec<CameraParams<f64>>,
        landmarks: Vec<Vector3<f64>>,
        observations: Vec<Observation>,
    ) -> Self {
        let landmark_observations = group_by_landmark(&observations, landmarks.len(), cameras.len());
        Self {
            cameras,
            landmarks,
            observations,
            landmark_observations,
        }
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    /// Observation indices of landmark `j`, sorted by camera index.
    pub fn observations_of_landmark(&self, j: usize) -> &[usize] {
        &self.landmark_observations[j]
    }
}

fn group_by_landmark(
    observations: &[Observation],
    n_landmarks: usize,
    n_cameras: usize,
) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_landmarks];
    for (idx, obs) in observations.iter().enumerate() {
        debug_assert!(obs.landmark_index < n_landmarks);
        debug_assert!(obs.camera_index < n_cameras);
        groups[obs.landmark_index].push(idx);
    }
    for group in &mut groups {
        group.sort_by_key(|&idx| observations[idx].camera_index);
    }
    groups
}

/// Token reader that tracks line numbers for error reporting.
struct TokenReader<R: BufRead> {
    reader: R,
    line: usize,
    tokens: std::vec::IntoIter<String>,
}

impl<R: BufRead> TokenReader<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            line: 0,
            tokens: Vec::new().into_iter(),
        }
    }

    fn next_token(&mut self) -> Result<Option<(usize, String)>, BalError> {
        loop {
            if let Some(tok) = self.tokens.next() {
                return Ok(Some((self.line, tok)));
            }
            let mut buf = String::new();
            if self.reader.read_line(&mut buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let toks: Vec<String> = buf.split_whitespace().map(|s| s.to_string()).collect();
            self.tokens = toks.into_iter();
        }
    }

    fn next_f64(&mut self, what: &str) -> Result<f64, BalError> {
        match self.next_token()? {
            Some((line, tok)) => tok.parse::<f64>().map_err(|_| BalError::Parse {
                line,
                message: format!("expected {what}, found {tok:?}"),
            }),
            None => Err(BalError::Parse {
                line: self.line,
                message: format!("unexpected end of file while reading {what}"),
            }),
        }
    }

    fn next_usize(&mut self, what: &str) -> Result<(usize, usize), BalError> {
        match self.next_token()? {
            Some((line, tok)) => {
                let value = tok.parse::<usize>().map_err(|_| BalError::Parse {
                    line,
                    message: format!("expected {what}, found {tok:?}"),
                })?;
                Ok((line, value))
            }
            None => Err(BalError::Parse {
                line: self.line,
                message: format!("unexpected end of file while reading {what}"),
            }),
        }
    }
}

/// Parses a BAL problem from a text stream.
pub fn parse_bal<R: BufRead>(reader: R) -> Result<BaProblem, BalError> {
    let mut tokens = TokenReader::new(reader);

    let (_, n_cameras) = tokens.next_usize("camera count")?;
    let (_, n_landmarks) = tokens.next_usize("landmark count")?;
    let (_, n_observations) = tokens.next_usize("observation count")?;

    let mut observations = Vec::with_capacity(n_observations);
    for _ in 0..n_observations {
        let (line, camera_index) = tokens.next_usize("camera index")?;
        if camera_index >= n_cameras {
            return Err(BalError::CameraIndexOutOfRange {
                line,
                index: camera_index,
                count: n_cameras,
            });
        }
        let (line, landmark_index) = tokens.next_usize("landmark index")?;
        if landmark_index >= n_landmarks {
            return Err(BalError::LandmarkIndexOutOfRange {
                line,
                index: landmark_index,
                count: n_landmarks,
            });
        }
        let x = tokens.next_f64("observation x")?;
        let y = tokens.next_f64("observation y")?;
        observations.push(Observation {
            camera_index,
            landmark_index,
            pixel: Vector2::new(x, y),
        });
    }

    let mut cameras = Vec::with_capacity(n_cameras);
    for _ in 0..n_cameras {
        let mut p = [0.0; 9];
        for (i, v) in p.iter_mut().enumerate() {
            *v = tokens.next_f64(&format!("camera parameter {i}"))?;
        }
        cameras.push(CameraParams::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
            p[6],
            p[7],
            p[8],
        ));
    }

    let mut landmarks = Vec::with_capacity(n_landmarks);
    for _ in 0..n_landmarks {
        let x = tokens.next_f64("landmark x")?;
        let y = tokens.next_f64("landmark y")?;
        let z = tokens.next_f64("landmark z")?;
        landmarks.push(Vector3::new(x, y, z));
    }

    Ok(BaProblem::new(cameras, landmarks, observations))
}

/// Loads a BAL problem from a plain or gzip-compressed file.
pub fn load_bal(path: impl AsRef<Path>) -> Result<BaProblem, BalError> {
    let mut file = File::open(path.as_ref())?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = {
        use std::io::Seek;
        let mut f = file;
        f.seek(std::io::SeekFrom::Start(0))?;
        f
    };
    if n == 2 && magic == [0x1f, 0x8b] {
        parse_bal(BufReader::new(flate2::read::GzDecoder::new(file)))
    } else {
        parse_bal(BufReader::new(file))
    }
}

/// Writes a problem in BAL layout with full precision.
pub fn write_bal<W: Write>(problem: &BaProblem, writer: &mut W) -> Result<(), BalError> {
    writeln!(
        writer,
        "{} {} {}",
        problem.num_cameras(),
        problem.num_landmarks(),
        problem.num_observations()
    )?;
    for obs in &problem.observations {
        writeln!(
            writer,
            "{} {} {:.16e} {:.16e}",
            obs.camera_index, obs.landmark_index, obs.pixel.x, obs.pixel.y
        )?;
    }
    for cam in &problem.cameras {
        for v in cam.to_vector().iter() {
            writeln!(writer, "{v:.16e}")?;
        }
    }
    for lm in &problem.landmarks {
        for v in lm.iter() {
            writeln!(writer, "{v:.16e}")?;
        }
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Centers the landmark cloud at the per-axis median and rescales it so the
/// median absolute deviation of all landmark coordinates is 100; cameras are
/// transformed by the same similarity so residuals are unchanged.
pub fn normalize_gauge(problem: &BaProblem) -> Result<BaProblem, BalError> {
    let n = problem.num_landmarks();
    if n == 0 {
        return Err(BalError::EmptyAfterFiltering);
    }

    let mut center = Vector3::zeros();
    for axis in 0..3 {
        let mut coords: Vec<f64> = problem.landmarks.iter().map(|lm| lm[axis]).collect();
        center[axis] = median(&mut coords);
    }

    // MAD over all 3 n_l scalar coordinates, deviations taken per axis.
    let mut deviations = Vec::with_capacity(3 * n);
    for lm in &problem.landmarks {
        for axis in 0..3 {
            deviations.push((lm[axis] - center[axis]).abs());
        }
    }
    let mad = median(&mut deviations);
    if mad == 0.0 {
        return Err(BalError::DegenerateCloud);
    }
    let scale = 100.0 / mad;

    let landmarks = problem
        .landmarks
        .iter()
        .map(|lm| (lm - center) * scale)
        .collect();
    // With X' = s (X - c), choosing t' = s (t + R c) keeps the camera-frame
    // point P' = s P, and the projection is invariant under uniform scaling.
    let cameras = problem
        .cameras
        .iter()
        .map(|cam| {
            let mut out = *cam;
            out.translation = (cam.translation + crate::math::rotate(&cam.rotation, &center)) * scale;
            out
        })
        .collect();

    Ok(BaProblem::new(cameras, landmarks, problem.observations.clone()))
}

/// Adds iid Gaussian noise of standard deviation `sigma` to all landmark
/// positions and camera translations. Deterministic for a fixed seed and
/// always computed in double precision.
pub fn perturb(problem: &BaProblem, sigma: f64, seed: u64) -> BaProblem {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha20Rng| -> f64 {
        let v: f64 = StandardNormal.sample(rng);
        v * sigma
    };

    let landmarks = problem
        .landmarks
        .iter()
        .map(|lm| Vector3::new(lm.x + sample(&mut rng), lm.y + sample(&mut rng), lm.z + sample(&mut rng)))
        .collect();
    let cameras = problem
        .cameras
        .iter()
        .map(|cam| {
            let mut out = *cam;
            out.translation = Vector3::new(
                cam.translation.x + sample(&mut rng),
                cam.translation.y + sample(&mut rng),
                cam.translation.z + sample(&mut rng),
            );
            out
        })
        .collect();

    BaProblem::new(cameras, landmarks, problem.observations.clone())
}

/// Removes observations whose landmark has viewing depth `<= z_min` in the
/// observing camera, then iteratively drops landmarks with fewer than two
/// remaining observations. Landmark indices are densely reindexed in their
/// original order.
pub fn filter_observations(problem: &BaProblem, z_min: f64) -> Result<BaProblem, BalError> {
    let mut keep_obs: Vec<bool> = problem
        .observations
        .iter()
        .map(|obs| {
            let cam = &problem.cameras[obs.camera_index];
            cam.depth(&problem.landmarks[obs.landmark_index]) > z_min
        })
        .collect();

    let mut keep_landmark = vec![true; problem.num_landmarks()];
    loop {
        let mut counts = vec![0usize; problem.num_landmarks()];
        for (idx, obs) in problem.observations.iter().enumerate() {
            if keep_obs[idx] && keep_landmark[obs.landmark_index] {
                counts[obs.landmark_index] += 1;
            }
        }
        let mut changed = false;
        for (j, keep) in keep_landmark.iter_mut().enumerate() {
            if *keep && counts[j] < 2 {
                *keep = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (idx, obs) in problem.observations.iter().enumerate() {
        if !keep_landmark[obs.landmark_index] {
            keep_obs[idx] = false;
        }
    }

    let mut new_index = vec![usize::MAX; problem.num_landmarks()];
    let mut landmarks = Vec::new();
    for (j, lm) in problem.landmarks.iter().enumerate() {
        if keep_landmark[j] {
            new_index[j] = landmarks.len();
            landmarks.push(*lm);
        }
    }

    let observations: Vec<Observation> = problem
        .observations
        .iter()
        .enumerate()
        .filter(|(idx, _)| keep_obs[*idx])
        .map(|(_, obs)| Observation {
            camera_index: obs.camera_index,
            landmark_index: new_index[obs.landmark_index],
            pixel: obs.pixel,
        })
        .collect();

    if landmarks.is_empty() || observations.is_empty() {
        return Err(BalError::EmptyAfterFiltering);
    }

    Ok(BaProblem::new(
        problem.cameras.clone(),
        landmarks,
        observations,
    ))
}

/// Preprocessing options; defaults follow the evaluation setup.
#[derive(Debug, Clone, Copy)]
pub struct PreprocessOptions {
    pub sigma: f64,
    pub seed: u64,
    pub z_min: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            sigma: 1e-2,
            seed: 1,
            z_min: 1e-8,
        }
    }
}

/// Full deterministic preprocessing pipeline:
/// normalize gauge, perturb, filter.
pub fn preprocess(problem: &BaProblem, opts: &PreprocessOptions) -> Result<BaProblem, BalError> {
    let normalized = normalize_gauge(problem)?;
    let perturbed = perturb(&normalized, opts.sigma, opts.seed);
    filter_observations(&perturbed, opts.z_min)
}

/// Size and density statistics of a problem, mirroring the usual BAL
/// benchmark table columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSummary {
    pub n_cameras: usize,
    pub n_landmarks: usize,
    pub n_observations: usize,
    pub obs_per_camera: f64,
    pub obs_per_landmark_mean: f64,
    pub obs_per_landmark_std: f64,
    pub obs_per_landmark_max: usize,
}

impl ProblemSummary {
    pub fn of(problem: &BaProblem) -> Self {
        let n_l = problem.num_landmarks();
        let counts: Vec<f64> = (0..n_l)
            .map(|j| problem.observations_of_landmark(j).len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n_l as f64;
        let var = counts.iter().map(|k| (k - mean) * (k - mean)).sum::<f64>() / n_l as f64;
        Self {
            n_cameras: problem.num_cameras(),
            n_landmarks: n_l,
            n_observations: problem.num_observations(),
            obs_per_camera: problem.num_observations() as f64 / problem.num_cameras() as f64,
            obs_per_landmark_mean: mean,
            obs_per_landmark_std: var.sqrt(),
            obs_per_landmark_max: counts.iter().map(|&k| k as usize).max().unwrap_or(0),
        }
    }
}

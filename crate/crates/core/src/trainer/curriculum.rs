//! Camera sampling schedule and view-dependent prompt suffixes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::DatasetKind;

/// `(first epoch, azimuth half-range)` steps of the schedule.
pub const AZIMUTH_SCHEDULE: [(usize, f64); 5] = [(20, 30.0), (50, 45.0), (80, 60.0), (100, 90.0), (120, 180.0)];

/// Epoch from which the camera may leave the sensor pose.
pub const CURRICULUM_START: usize = AZIMUTH_SCHEDULE[0].0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epoch: usize,
    /// Azimuth half-range in degrees.
    pub nu: f64,
    pub elevation_enabled: bool,
    /// Elevation of the sensor above the ground plane, degrees, `>= 0`.
    pub xi0: f64,
}

impl CurriculumState {
    pub fn at(epoch: usize, xi0: f64) -> Self {
        let nu = AZIMUTH_SCHEDULE
            .iter()
            .rev()
            .find(|(start, _)| epoch >= *start)
            .map_or(0.0, |(_, nu)| *nu);
        CurriculumState { epoch, nu, elevation_enabled: epoch >= CURRICULUM_START, xi0: xi0.max(0.0) }
    }
}

/// Deviation from the sensor camera, degrees, plus the distance factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSample {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance_scale: f64,
}

impl CameraSample {
    pub fn sensor() -> Self {
        CameraSample { azimuth: 0.0, elevation: 0.0, distance_scale: 1.0 }
    }
}

fn symmetric<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws a camera deviation for the current stage of the schedule.
///
/// Depth-camera elevations stay in `[-xi0, 0]`, i.e. the camera only moves
/// down toward the ground plane; LiDAR elevations span `[-xi0, xi0]` and the
/// distance to the object is scaled by `U(1, 2)`.
pub fn curriculum_sample<R: Rng>(state: &CurriculumState, kind: DatasetKind, rng: &mut R) -> CameraSample {
    if !state.elevation_enabled {
        return CameraSample::sensor();
    }
    let azimuth = symmetric(rng, -state.nu, state.nu);
    let (elevation, distance_scale) = match kind {
        DatasetKind::DepthCamera => (symmetric(rng, -state.xi0, 0.0), 1.0),
        DatasetKind::Lidar => (symmetric(rng, -state.xi0, state.xi0), symmetric(rng, 1.0, 2.0)),
    };
    CameraSample { azimuth, elevation, distance_scale }
}

pub fn curriculum_sample_seeded(state: &CurriculumState, kind: DatasetKind, seed: u64) -> CameraSample {
    curriculum_sample(state, kind, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Wraps degrees to `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

pub const VIEW_SUFFIXES: [&str; 5] = ["front view", "side view", "back view", "overhead view", "bottom view"];

/// Suffix for a view at total azimuth `theta` and total elevation, degrees.
pub fn view_suffix(theta: f64, elevation: f64) -> &'static str {
    let theta = wrap_degrees(theta).abs();
    if elevation >= 60.0 {
        "overhead view"
    } else if elevation <= -15.0 {
        "bottom view"
    } else if theta <= 45.0 {
        "front view"
    } else if theta <= 135.0 {
        "side view"
    } else {
        "back view"
    }
}

/// `"<base>, <suffix>"` for the camera at `gamma0_azimuth + gamma_azimuth`.
/// `elevation` is the total elevation above the ground plane.
pub fn view_text(base: &str, gamma0_azimuth: f64, gamma_azimuth: f64, elevation: f64) -> String {
    format!("{base}, {}", view_suffix(gamma0_azimuth + gamma_azimuth, elevation))
}

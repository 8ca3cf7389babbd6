//! Upper-hemisphere fixture shared by the integration suites.
#![allow(dead_code)]

use sdfill::evalx::{chamfer_mm, sample_mesh, TriangleMesh};
use sdfill::geometry::CameraIntrinsics;
use sdfill::guidance::{MockGuidance, ReferenceView};
use sdfill::ingest::{centralize_and_scale, Normalization, SensorObservation};
use sdfill::linalg::Vec3;
use sdfill::renderer::AnalyticSphere;
use sdfill::synthetic::{orbit_camera, sphere_scan, sphere_surface_points};
use sdfill::trainer::{CameraSample, TrainConfig, Trainer};

pub const RADIUS: f64 = 0.5;

pub struct Fixture {
    pub truth: AnalyticSphere<f64>,
    pub norm: Normalization,
    pub obs: SensorObservation<f64>,
}

/// Depth scan of the upper half of a radius-0.5 sphere from 30 degrees up,
/// normalized for training.
pub fn hemisphere(image: usize) -> Fixture {
    let truth = AnalyticSphere::new(Vec3::zero(), RADIUS);
    let pose = orbit_camera(Vec3::zero(), 2.0, 0.0, 30.0).unwrap();
    let intr = CameraIntrinsics::from_fov(45.0, image).unwrap();
    let raw = sphere_scan(&truth, &pose, &intr, |p| p.z() >= 0.0).unwrap();
    let (norm, obs) = centralize_and_scale(&raw).unwrap();
    Fixture { truth, norm, obs }
}

pub fn small_config(epochs: usize, iterations: usize, render: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        iterations_per_epoch: iterations,
        render_width: render,
        render_height: render,
        samples_per_ray: 32,
        pixel_batch: 200,
        point_batch: 200,
        aux_samples: 200,
        field_width: 16,
        encoding_levels: 2,
        mesh_resolution: 32,
        prompt: "a ball".into(),
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Renders of the full truth sphere at 12 azimuths and three elevations
/// spanning the sensor's elevation band.
pub fn sphere_references(fx: &Fixture, config: &TrainConfig) -> MockGuidance {
    let plain = Trainer::new(config.clone(), fx.obs.clone(), None).unwrap();
    let xi0 = plain.sensor_elevation();
    let sphere = AnalyticSphere::new(fx.norm.apply(&fx.truth.center), RADIUS * fx.norm.scale);
    let (w, h) = (config.render_width, config.render_height);
    let mut refs = Vec::new();
    for k in 0..12 {
        for el in [0.0, xi0 / 2.0, xi0] {
            let s = CameraSample { azimuth: k as f64 * 30.0, elevation: el - xi0, distance_scale: 1.0 };
            let out = plain.render_field_view(&sphere, &s, [0.0; 3], 0).unwrap();
            refs.push(ReferenceView::new(plain.view_angles(&s), w, h, out.rgb_flat(), out.opacity.clone()).unwrap());
        }
    }
    MockGuidance::new(refs).unwrap()
}

/// Chamfer distance in scene units between a sensor-frame mesh and the
/// truth sphere.
pub fn chamfer_to_truth(mesh: &TriangleMesh, truth: &AnalyticSphere<f64>, samples: usize) -> f64 {
    let pts = sample_mesh(mesh, samples, 1).unwrap();
    let gt = sphere_surface_points(truth, samples);
    chamfer_mm(&pts, &gt).unwrap() / 1000.0
}

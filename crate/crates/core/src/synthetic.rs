//! Synthetic scans of analytic shapes, for demos and end-to-end checks.

use crate::error::Result;
use crate::geometry::{CameraIntrinsics, CameraPose, Plane};
use crate::ingest::{DatasetKind, Normalization, SensorModel, SensorObservation};
use crate::linalg::Vec3;
use crate::renderer::{camera_rays, AnalyticSphere};
use crate::scalar::Scalar;

/// Pinhole camera at `distance` from `target`, raised by `elevation_deg`
/// above the horizontal (z up), looking at `target`.
pub fn orbit_camera<T: Scalar>(target: Vec3<T>, distance: T, azimuth_deg: T, elevation_deg: T) -> Result<CameraPose<T>> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let offset = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * distance;
    CameraPose::look_at(target + offset, target, Vec3::new(T::zero(), T::zero(), T::one()))
}

/// Depth-camera scan of a sphere resting on the plane `z = center.z - r`.
///
/// Pixels whose hit point fails `keep` are left out of the observation
/// entirely (neither observed nor empty), as if the segmentation could not
/// label them. Pixels that miss the sphere are unobserved rays.
pub fn sphere_scan<T: Scalar>(
    sphere: &AnalyticSphere<T>,
    pose: &CameraPose<T>,
    intrinsics: &CameraIntrinsics<T>,
    keep: impl Fn(&Vec3<T>) -> bool,
) -> Result<SensorObservation<T>> {
    let mut obs = SensorObservation {
        kind: DatasetKind::DepthCamera,
        points: Vec::new(),
        rays: Vec::new(),
        mask: Vec::new(),
        depth: Vec::new(),
        pose: *pose,
        sensor: SensorModel::Pinhole(*intrinsics),
        plane: Plane::from_point_normal(
            sphere.center - Vec3::new(T::zero(), T::zero(), sphere.radius),
            Vec3::new(T::zero(), T::zero(), T::one()),
        )?,
        normalization: Normalization::identity(),
    };
    for ray in camera_rays(intrinsics, pose)? {
        match sphere.intersect(&ray) {
            Some(s) => {
                let p = ray.at(s);
                if keep(&p) {
                    obs.points.push(p);
                    obs.rays.push(ray);
                    obs.mask.push(T::one());
                    obs.depth.push(s);
                }
            }
            None => {
                obs.rays.push(ray);
                obs.mask.push(T::zero());
                obs.depth.push(T::zero());
            }
        }
    }
    Ok(obs)
}

/// Points spread evenly over a sphere surface.
pub fn sphere_surface_points<T: Scalar>(sphere: &AnalyticSphere<T>, n: usize) -> Vec<Vec3<T>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let d = Vec3::new(T::of(r * phi.cos()), T::of(r * phi.sin()), T::of(z));
            sphere.center + d * sphere.radius
        })
        .collect()
}

//! Rigid-body geometry: rotations, camera poses, pinhole rays, ground planes
//! and the plane-relative camera update used by the view curriculum.
//!
//! Camera frames follow the pinhole convention: +z is the principal axis,
//! +x points right and +y points down in the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{mean_and_covariance, symmetric_eigen, Mat3, Vec3};
use crate::scalar::Scalar;

/// Proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation3<T>(Mat3<T>);

impl<T: Scalar> Rotation3<T> {
    pub fn identity() -> Self {
        Rotation3(Mat3::identity())
    }

    /// Wraps a matrix after checking orthonormality and `det = +1` to `tol`.
    pub fn from_matrix(m: Mat3<T>, tol: T) -> Result<Self> {
        let rrt = m.mul_mat(&m.transpose());
        if rrt.max_abs_diff(&Mat3::identity()) > tol || (m.det() - T::one()).abs() > tol {
            return Err(invalid("matrix is not a proper rotation"));
        }
        Ok(Rotation3(m))
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.0
    }

    pub fn apply(&self, v: &Vec3<T>) -> Vec3<T> {
        self.0.mul_vec(v)
    }

    pub fn compose(&self, other: &Self) -> Self {
        Rotation3(self.0.mul_mat(&other.0))
    }

    pub fn inverse(&self) -> Self {
        Rotation3(self.0.transpose())
    }
}

/// Rotation about a unit `axis` by `angle_deg` degrees (right-handed).
pub fn rodrigues_rotation<T: Scalar>(axis: Vec3<T>, angle_deg: T) -> Result<Rotation3<T>> {
    let n = axis.norm();
    if !n.is_finite() || (n - T::one()).abs() > T::of(1e-6) {
        return Err(invalid(format!("rotation axis must be unit length, got norm {n}")));
    }
    let theta = angle_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let [x, y, z] = axis.0;
    let one_c = T::one() - c;
    Ok(Rotation3(Mat3([
        [c + x * x * one_c, x * y * one_c - z * s, x * z * one_c + y * s],
        [y * x * one_c + z * s, c + y * y * one_c, y * z * one_c - x * s],
        [z * x * one_c - y * s, z * y * one_c + x * s, c + z * z * one_c],
    ])))
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose<T> {
    pub rotation: Rotation3<T>,
    pub translation: Vec3<T>,
}

impl<T: Scalar> CameraPose<T> {
    pub fn new(rotation: Rotation3<T>, translation: Vec3<T>) -> Self {
        CameraPose { rotation, translation }
    }

    pub fn identity() -> Self {
        CameraPose::new(Rotation3::identity(), Vec3::zero())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image -y).
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let forward = (target - eye)
            .normalized()
            .ok_or_else(|| invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .normalized()
            .ok_or_else(|| invalid("up vector parallel to viewing direction"))?;
        let down = forward.cross(&right);
        Ok(CameraPose::new(
            Rotation3(Mat3::from_cols(right, down, forward)),
            eye,
        ))
    }

    /// Viewing direction in world coordinates (third rotation column).
    pub fn principal_axis(&self) -> Vec3<T> {
        self.rotation.0.col(2)
    }

    pub fn center(&self) -> Vec3<T> {
        self.translation
    }

    pub fn camera_to_world(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.apply(p) + self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.inverse().apply(&(*p - self.translation))
    }

    /// Moves the camera along the line through the world origin.
    pub fn with_distance_scale(&self, s: T) -> Self {
        CameraPose::new(self.rotation, self.translation * s)
    }

    /// Applies a world-frame rotation about the origin to both orientation
    /// and position.
    pub fn rotated(&self, r: &Rotation3<T>) -> Self {
        CameraPose::new(r.compose(&self.rotation), r.apply(&self.translation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square image with the principal point at its center.
    pub fn from_fov(fov_deg: T, size: usize) -> Result<Self> {
        let half = T::of(size as f64 * 0.5);
        let f = half / (fov_deg.to_radians() * T::of(0.5)).tan();
        Self::new(f, f, half, half, size, size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(invalid("focal lengths must be positive and finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image size must be at least 1x1"));
        }
        Ok(())
    }

    /// Same field of view sampled on a `width x height` grid.
    pub fn scaled_to(&self, width: usize, height: usize) -> Result<Self> {
        let sx = T::of(width as f64 / self.width as f64);
        let sy = T::of(height as f64 / self.height as f64);
        Self::new(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)
    }

    /// Pixel coordinates of a camera-frame point; `None` behind the camera.
    pub fn project_camera(&self, p: &Vec3<T>) -> Option<(T, T)> {
        if p.z() <= T::zero() {
            return None;
        }
        Some((self.fx * p.x() / p.z() + self.cx, self.fy * p.y() / p.z() + self.cy))
    }
}

/// Plane `{x : normal . x + offset = 0}` with unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane<T> {
    pub normal: Vec3<T>,
    pub offset: T,
}

impl<T: Scalar> Plane<T> {
    pub fn new(normal: Vec3<T>, offset: T) -> Result<Self> {
        let n = normal.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(invalid("plane normal must be non-zero"));
        }
        Ok(Plane {
            normal: normal * (T::one() / n),
            offset: offset / n,
        })
    }

    pub fn from_point_normal(point: Vec3<T>, normal: Vec3<T>) -> Result<Self> {
        let n = normal.normalized().ok_or_else(|| invalid("plane normal must be non-zero"))?;
        Ok(Plane { normal: n, offset: -n.dot(&point) })
    }

    pub fn signed_distance(&self, p: &Vec3<T>) -> T {
        self.normal.dot(p) + self.offset
    }

    pub fn flipped(&self) -> Self {
        Plane { normal: -self.normal, offset: -self.offset }
    }

    /// Same plane with the normal chosen so `p` has non-negative distance.
    pub fn oriented_toward(&self, p: &Vec3<T>) -> Self {
        if self.signed_distance(p) < T::zero() {
            self.flipped()
        } else {
            *self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Scalar> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Result<Self> {
        let d = direction.normalized().ok_or_else(|| invalid("ray direction must be non-zero"))?;
        Ok(Ray { origin, direction: d })
    }

    pub fn at(&self, s: T) -> Vec3<T> {
        self.origin + self.direction * s
    }

    pub fn transformed(&self, r: &Rotation3<T>, scale: T) -> Self {
        Ray {
            origin: r.apply(&self.origin) * scale,
            direction: r.apply(&self.direction),
        }
    }
}

/// Applies the plane-relative azimuth/elevation update to a camera pose.
///
/// The azimuth rotation turns about the plane normal; the elevation rotation
/// turns about `normal x principal_axis`. Both act on orientation and
/// position, so the object is assumed to sit at the world origin.
pub fn camera_update<T: Scalar>(
    c0: &CameraPose<T>,
    plane: &Plane<T>,
    gamma_azimuth: T,
    gamma_elevation: T,
) -> Result<CameraPose<T>> {
    let rotation = update_rotation(c0, plane, gamma_azimuth, gamma_elevation)?;
    Ok(c0.rotated(&rotation))
}

/// `R_azimuth * R_elevation` for [`camera_update`].
pub fn update_rotation<T: Scalar>(
    c0: &CameraPose<T>,
    plane: &Plane<T>,
    gamma_azimuth: T,
    gamma_elevation: T,
) -> Result<Rotation3<T>> {
    let n = plane.normal;
    let a0 = c0.principal_axis();
    let elev_axis = n
        .cross(&a0)
        .normalized()
        .filter(|_| n.cross(&a0).norm() > T::of(1e-9))
        .ok_or(Error::DegenerateElevationAxis)?;
    let r_az = rodrigues_rotation(n, gamma_azimuth)?;
    let r_el = rodrigues_rotation(elev_axis, gamma_elevation)?;
    Ok(r_az.compose(&r_el))
}

/// Backprojects a (continuous) pixel coordinate into a world-space ray.
pub fn backproject<T: Scalar>(
    intr: &CameraIntrinsics<T>,
    pose: &CameraPose<T>,
    pixel: (T, T),
) -> Result<Ray<T>> {
    intr.validate()?;
    let (u, v) = pixel;
    let (w, h) = (T::of(intr.width as f64), T::of(intr.height as f64));
    if !(u >= T::zero() && u <= w && v >= T::zero() && v <= h) {
        return Err(invalid(format!("pixel ({u}, {v}) outside {}x{} image", intr.width, intr.height)));
    }
    let dir_cam = Vec3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, T::one());
    Ray::new(pose.translation, pose.rotation.apply(&dir_cam))
}

/// Projects a world point into pixel coordinates.
pub fn project<T: Scalar>(intr: &CameraIntrinsics<T>, pose: &CameraPose<T>, p: &Vec3<T>) -> Option<(T, T)> {
    intr.project_camera(&pose.world_to_camera(p))
}

/// Elevation of the camera's viewing direction relative to the plane, in
/// degrees. Positive when the camera looks down toward the plane.
pub fn elevation_of<T: Scalar>(c0: &CameraPose<T>, plane: &Plane<T>) -> T {
    let n = plane.oriented_toward(&c0.center()).normal;
    let s = (-c0.principal_axis().dot(&n)).max(-T::one()).min(T::one());
    s.asin().to_degrees()
}

/// RANSAC plane fit over random 3-point hypotheses.
///
/// The winning hypothesis is refined by total least squares over its inliers.
/// Returns the plane and the sorted inlier indices.
pub fn fit_plane_ransac<T: Scalar>(
    points: &[Vec3<T>],
    inlier_threshold: T,
    iterations: usize,
    seed: u64,
) -> Result<(Plane<T>, Vec<usize>)> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let scale = points
        .iter()
        .map(|p| p.norm())
        .fold(T::zero(), T::max)
        .max(T::one());
    let degenerate_eps = T::of(1e-12) * scale * scale;

    let mut best: Option<(Plane<T>, usize)> = None;
    for _ in 0..iterations.max(1) {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let (a, b, c) = (points[i], points[j], points[k]);
        let normal = (b - a).cross(&(c - a));
        if normal.norm() <= degenerate_eps {
            continue;
        }
        let plane = Plane::from_point_normal(a, normal)?;
        let count = count_inliers(points, &plane, inlier_threshold);
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((plane, count));
        }
    }
    let (plane, count) = best.ok_or(Error::NoPlaneFound)?;
    let inliers = inlier_indices(points, &plane, inlier_threshold);

    let refined = refit_total_least_squares(points, &inliers)
        .filter(|p| count_inliers(points, p, inlier_threshold) >= count);
    match refined {
        Some(p) => {
            let idx = inlier_indices(points, &p, inlier_threshold);
            Ok((p, idx))
        }
        None => Ok((plane, inliers)),
    }
}

fn count_inliers<T: Scalar>(points: &[Vec3<T>], plane: &Plane<T>, thr: T) -> usize {
    points.iter().filter(|p| plane.signed_distance(p).abs() <= thr).count()
}

fn inlier_indices<T: Scalar>(points: &[Vec3<T>], plane: &Plane<T>, thr: T) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.signed_distance(p).abs() <= thr)
        .map(|(i, _)| i)
        .collect()
}

fn refit_total_least_squares<T: Scalar>(points: &[Vec3<T>], idx: &[usize]) -> Option<Plane<T>> {
    if idx.len() < 3 {
        return None;
    }
    let subset: Vec<Vec3<T>> = idx.iter().map(|&i| points[i]).collect();
    let (mean, cov) = mean_and_covariance(&subset);
    let (vals, vecs) = symmetric_eigen(cov);
    // collinear inliers leave two vanishing eigenvalues
    if vals[1] <= 1e-12 * vals[2].max(1e-300) {
        return None;
    }
    let normal = Vec3::from_f64(vecs[0]);
    Plane::from_point_normal(Vec3::from_f64(mean), normal).ok()
}

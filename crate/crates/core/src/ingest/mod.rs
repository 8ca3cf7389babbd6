//! Sensor data to [`SensorObservation`]: depth backprojection, LiDAR
//! projection, object centralization and file loading.

mod lidar;
pub mod ply;

pub use lidar::{cell_of, lidar_project, LidarFov, RangeImage, CROP_MARGIN, LIDAR_COLS, LIDAR_ROWS};

use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_error, invalid, Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, Plane, Ray, Rotation3};
use crate::linalg::{mean_and_covariance, symmetric_eigen, Mat3, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[default]
    DepthCamera,
    Lidar,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth-camera" | "depth" => Ok(DatasetKind::DepthCamera),
            "lidar" => Ok(DatasetKind::Lidar),
            _ => Err(Error::Config(format!("unknown dataset kind {s:?} (depth-camera or lidar)"))),
        }
    }
}

/// How the sensor's rays were generated.
#[derive(Clone, Debug, PartialEq)]
pub enum SensorModel<T> {
    Pinhole(CameraIntrinsics<T>),
    Lidar(RangeImage),
}

/// Similarity applied to the raw data: `x' = (x - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
    /// Whether the oriented-bounding-box center was used.
    pub used_box_center: bool,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization { center: [0.0; 3], scale: 1.0, used_box_center: false }
    }

    pub fn apply<T: Scalar>(&self, p: &Vec3<T>) -> Vec3<T> {
        (*p - Vec3::from_f64(self.center)) * T::of(self.scale)
    }

    pub fn invert<T: Scalar>(&self, p: &Vec3<T>) -> Vec3<T> {
        *p * T::of(1.0 / self.scale) + Vec3::from_f64(self.center)
    }

    pub fn apply_plane<T: Scalar>(&self, plane: &Plane<T>) -> Plane<T> {
        let c = Vec3::from_f64(self.center);
        Plane { normal: plane.normal, offset: (plane.offset + plane.normal.dot(&c)) * T::of(self.scale) }
    }

    pub fn apply_pose<T: Scalar>(&self, pose: &CameraPose<T>) -> CameraPose<T> {
        CameraPose::new(pose.rotation, self.apply(&pose.translation))
    }

    pub fn apply_ray<T: Scalar>(&self, ray: &Ray<T>) -> Ray<T> {
        Ray { origin: self.apply(&ray.origin), direction: ray.direction }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Normalization) -> Normalization {
        let s = self.scale * next.scale;
        // x'' = ((x - c1) s1 - c2) s2 = (x - (c1 + c2 / s1)) s1 s2
        let center = [0, 1, 2].map(|i| self.center[i] + next.center[i] / self.scale);
        Normalization { center, scale: s, used_box_center: next.used_box_center }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorObservation<T> {
    pub kind: DatasetKind,
    /// Observed object points, one per ray with `mask = 1`.
    pub points: Vec<Vec3<T>>,
    pub rays: Vec<Ray<T>>,
    pub mask: Vec<T>,
    /// Along-ray distance; zero where `mask = 0`.
    pub depth: Vec<T>,
    pub pose: CameraPose<T>,
    pub sensor: SensorModel<T>,
    pub plane: Plane<T>,
    pub normalization: Normalization,
}

impl<T: Scalar> SensorObservation<T> {
    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m > T::of(0.5)).count()
    }

    /// Checks the structural invariants within `tol`.
    pub fn validate(&self, tol: T) -> Result<()> {
        if self.rays.len() != self.mask.len() || self.rays.len() != self.depth.len() {
            return Err(invalid("rays, mask and depth lengths differ"));
        }
        if self.points.len() != self.observed_count() {
            return Err(invalid(format!(
                "{} points for {} observed rays",
                self.points.len(),
                self.observed_count()
            )));
        }
        let observed = self.rays.iter().zip(&self.depth).zip(&self.mask).filter(|(_, m)| **m > T::of(0.5));
        for (p, ((ray, d), _)) in self.points.iter().zip(observed) {
            if ray.at(*d).distance(p) > tol {
                return Err(invalid("an observed point does not lie on its ray"));
            }
        }
        Ok(())
    }

    /// Applies a normalization to every spatial quantity and records it.
    pub fn normalized(&self, n: &Normalization) -> Self {
        let s = T::of(n.scale);
        SensorObservation {
            kind: self.kind,
            points: self.points.iter().map(|p| n.apply(p)).collect(),
            rays: self.rays.iter().map(|r| n.apply_ray(r)).collect(),
            mask: self.mask.clone(),
            depth: self.depth.iter().map(|d| *d * s).collect(),
            pose: n.apply_pose(&self.pose),
            sensor: self.sensor.clone(),
            plane: n.apply_plane(&self.plane),
            normalization: self.normalization.then(n),
        }
    }

    /// Maps a point from the normalized frame back to sensor coordinates.
    pub fn to_sensor_frame(&self, p: &Vec3<T>) -> Vec3<T> {
        self.normalization.invert(p)
    }
}

/// Backprojects a z-depth image (millimetres) under a segmentation mask.
///
/// Every pixel yields a ray through its center. Pixels with mask set and
/// depth > 0 are observed: their along-ray distance is the z-depth times the
/// ray's secant, and the hit point joins `points`. The plane is left as a
/// placeholder (`z = 0` facing the camera) for the caller to replace.
pub fn depth_to_observation<T: Scalar>(
    depth_mm: &[u16],
    mask: &[bool],
    intr: &CameraIntrinsics<T>,
    pose: &CameraPose<T>,
) -> Result<SensorObservation<T>> {
    intr.validate()?;
    let n = intr.width * intr.height;
    if depth_mm.len() != n || mask.len() != n {
        return Err(invalid(format!(
            "depth ({}) and mask ({}) must both have {}x{} pixels",
            depth_mm.len(),
            mask.len(),
            intr.width,
            intr.height
        )));
    }
    let mut obs = SensorObservation {
        kind: DatasetKind::DepthCamera,
        points: Vec::new(),
        rays: Vec::with_capacity(n),
        mask: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        pose: *pose,
        sensor: SensorModel::Pinhole(*intr),
        plane: Plane::new(pose.principal_axis() * -T::one(), T::zero())?,
        normalization: Normalization::identity(),
    };
    for v in 0..intr.height {
        for u in 0..intr.width {
            let i = v * intr.width + u;
            let x = (T::of(u as f64 + 0.5) - intr.cx) / intr.fx;
            let y = (T::of(v as f64 + 0.5) - intr.cy) / intr.fy;
            let dir_cam = Vec3::new(x, y, T::one());
            let secant = dir_cam.norm();
            let ray = Ray::new(pose.translation, pose.rotation.apply(&dir_cam))?;
            if mask[i] && depth_mm[i] > 0 {
                let d = T::of(depth_mm[i] as f64 * 1e-3) * secant;
                obs.points.push(ray.at(d));
                obs.mask.push(T::one());
                obs.depth.push(d);
            } else {
                obs.mask.push(T::zero());
                obs.depth.push(T::zero());
            }
            obs.rays.push(ray);
        }
    }
    if obs.points.is_empty() {
        return Err(Error::EmptyObservation("no pixel has both mask and depth".into()));
    }
    Ok(obs)
}

/// Scene points (every pixel with depth) from a z-depth image, for plane
/// fitting.
pub fn depth_points<T: Scalar>(depth_mm: &[u16], intr: &CameraIntrinsics<T>, pose: &CameraPose<T>) -> Vec<Vec3<T>> {
    let mut pts = Vec::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let z = depth_mm[v * intr.width + u];
            if z == 0 {
                continue;
            }
            let z = T::of(z as f64 * 1e-3);
            let x = (T::of(u as f64 + 0.5) - intr.cx) / intr.fx * z;
            let y = (T::of(v as f64 + 0.5) - intr.cy) / intr.fy * z;
            pts.push(pose.camera_to_world(&Vec3::new(x, y, z)));
        }
    }
    pts
}

/// Builds an observation from sensor-frame LiDAR object points: observed
/// cells become rays along their point, empty cells inside the crop become
/// unobserved rays through the cell center. The sensor sits at the origin.
pub fn lidar_observation<T: Scalar>(points: &[Vec3<T>], fov: LidarFov) -> Result<SensorObservation<T>> {
    let img = lidar_project(points, fov)?;
    let origin = Vec3::zero();
    let mut obs_points = Vec::new();
    let mut rays = Vec::new();
    let mut mask = Vec::new();
    let mut depth = Vec::new();
    let mut center_dir = Vec3::zero();
    for col in img.crop_columns() {
        for row in 0..LIDAR_ROWS {
            let k = row * LIDAR_COLS + col;
            match img.source[k] {
                Some(i) => {
                    let p = points[i];
                    let d = p.norm();
                    let ray = Ray::new(origin, p)?;
                    obs_points.push(ray.at(d));
                    rays.push(ray);
                    mask.push(T::one());
                    depth.push(d);
                    center_dir += p;
                }
                None => {
                    rays.push(Ray::new(origin, Vec3::from_f64(img.cell_direction(row, col)))?);
                    mask.push(T::zero());
                    depth.push(T::zero());
                }
            }
        }
    }
    // the camera looks at the object's mean direction, level with the ground
    let forward = center_dir.normalized().ok_or_else(|| Error::EmptyObservation("degenerate lidar points".into()))?;
    let pose = CameraPose::look_at(origin, forward, Vec3::new(T::zero(), T::zero(), T::one()))
        .or_else(|_| CameraPose::look_at(origin, forward, Vec3::new(T::one(), T::zero(), T::zero())))?;
    Ok(SensorObservation {
        kind: DatasetKind::Lidar,
        points: obs_points,
        rays,
        mask,
        depth,
        pose,
        sensor: SensorModel::Lidar(img),
        plane: Plane::new(Vec3::new(T::zero(), T::zero(), T::one()), T::of(1.7))?,
        normalization: Normalization::identity(),
    })
}

/// Corners of the PCA-oriented bounding box and its center.
pub fn oriented_bounding_box<T: Scalar>(points: &[Vec3<T>]) -> ([Vec3<f64>; 8], Vec3<f64>) {
    let (mean, cov) = mean_and_covariance(points);
    let (_, vecs) = symmetric_eigen(cov);
    let axes = vecs.map(Vec3::from_f64);
    let mean = Vec3::from_f64(mean);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        let d = Vec3::from_f64(p.to_f64()) - mean;
        for k in 0..3 {
            let c = d.dot(&axes[k]);
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let mut corners = [Vec3::zero(); 8];
    for (i, corner) in corners.iter_mut().enumerate() {
        let mut c = mean;
        for k in 0..3 {
            let v = if i >> k & 1 == 1 { hi[k] } else { lo[k] };
            c += axes[k] * v;
        }
        *corner = c;
    }
    let mut center = mean;
    for k in 0..3 {
        center += axes[k] * ((lo[k] + hi[k]) / 2.0);
    }
    (corners, center)
}

/// Ratio threshold above which the bounding-box center replaces the center
/// of mass.
pub const BOX_CENTER_RATIO: f64 = 1.7;
pub const TARGET_MAX_NORM: f64 = 0.5;

/// Chooses the object center and a uniform scale putting the farthest point
/// at norm 0.5.
pub fn centralization<T: Scalar>(points: &[Vec3<T>], kind: DatasetKind) -> Result<Normalization> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!("centralization needs 4 points, got {}", points.len())));
    }
    let (mean, _) = mean_and_covariance(points);
    let com = Vec3::from_f64(mean);
    let (corners, box_center) = oriented_bounding_box(points);
    let dists: Vec<f64> = corners.iter().map(|c| c.distance(&com)).collect();
    let (dmin, dmax) = dists.iter().fold((f64::INFINITY, 0.0f64), |(a, b), d| (a.min(*d), b.max(*d)));
    if dmax <= 0.0 {
        return Err(invalid("all points coincide"));
    }
    let use_box = kind == DatasetKind::Lidar || dmin <= 0.0 || dmax / dmin > BOX_CENTER_RATIO;
    let center = if use_box { box_center } else { com };
    let max_norm = points
        .iter()
        .map(|p| Vec3::from_f64(p.to_f64()).distance(&center))
        .fold(0.0, f64::max);
    if max_norm <= 0.0 {
        return Err(invalid("all points coincide"));
    }
    Ok(Normalization { center: center.0, scale: TARGET_MAX_NORM / max_norm, used_box_center: use_box })
}

/// Centers and scales an observation; returns the applied transform and the
/// normalized observation.
pub fn centralize_and_scale<T: Scalar>(obs: &SensorObservation<T>) -> Result<(Normalization, SensorObservation<T>)> {
    let n = centralization(&obs.points, obs.kind)?;
    Ok((n, obs.normalized(&n)))
}

/// Point cloud from a `.ply` or whitespace-delimited XYZ file.
pub fn load_points<T: Scalar>(path: &Path) -> Result<Vec<Vec3<T>>> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    let raw = if bytes.starts_with(b"ply") {
        ply::parse_ply(&bytes, &name)?.vertices
    } else {
        ply::parse_xyz(BufReader::new(bytes.as_slice()), &name)?
    };
    Ok(raw.into_iter().map(Vec3::from_f64).collect())
}

pub fn save_points<T: Scalar>(path: &Path, points: &[Vec3<T>]) -> Result<()> {
    let data = ply::PlyData { vertices: points.iter().map(|p| p.to_f64()).collect(), faces: Vec::new() };
    ply::write_ply_ascii(std::io::BufWriter::new(std::fs::File::create(path)?), &data)
}

/// 16-bit grayscale PNG of z-depth in millimetres.
pub fn load_depth_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            Ok((buf.width() as usize, buf.height() as usize, buf.into_raw()))
        }
        other => Err(format_error(
            &path.display().to_string(),
            "header",
            format!("expected 16-bit grayscale depth, got {:?}", other.color()),
        )),
    }
}

/// Any PNG; nonzero luminance is foreground.
pub fn load_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)?.to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.pixels().map(|p| p[0] > 0).collect()))
}

/// Intrinsics text file: `fx fy cx cy` then `width height`; `#` comments.
pub fn parse_intrinsics<T: Scalar>(text: &str, source: &str) -> Result<CameraIntrinsics<T>> {
    let mut nums = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or_default();
        for tok in content.split_whitespace() {
            nums.push((i + 1, tok.parse::<f64>().map_err(|e| format_error(source, format!("line {}", i + 1), format!("{tok:?}: {e}")))?));
        }
    }
    if nums.len() != 6 {
        return Err(format_error(source, "end of file", format!("expected 6 numbers (fx fy cx cy, width height), got {}", nums.len())));
    }
    let (w, h) = (nums[4].1, nums[5].1);
    if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
        return Err(format_error(source, format!("line {}", nums[4].0), "image size must be positive integers"));
    }
    CameraIntrinsics::new(T::of(nums[0].1), T::of(nums[1].1), T::of(nums[2].1), T::of(nums[3].1), w as usize, h as usize)
}

/// Camera-to-world pose as a 3x4 or 4x4 row-major matrix in text.
pub fn parse_pose<T: Scalar>(text: &str, source: &str) -> Result<CameraPose<T>> {
    let nums: Vec<f64> = text
        .lines()
        .flat_map(|l| l.split('#').next().unwrap_or_default().split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .map(|t| t.parse::<f64>().map_err(|e| format_error(source, "matrix", format!("{t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if nums.len() != 12 && nums.len() != 16 {
        return Err(format_error(source, "matrix", format!("expected 12 or 16 numbers, got {}", nums.len())));
    }
    let m = Mat3([
        [nums[0], nums[1], nums[2]],
        [nums[4], nums[5], nums[6]],
        [nums[8], nums[9], nums[10]],
    ]);
    let rotation = Rotation3::from_matrix(Mat3::from_f64(m.0), T::of(1e-6))
        .map_err(|e| format_error(source, "rotation", e.to_string()))?;
    Ok(CameraPose::new(rotation, Vec3::from_f64([nums[3], nums[7], nums[11]])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(50.0, 55.0, 16.0, 12.5, 32, 24).unwrap()
    }

    #[test]
    fn constant_depth_lies_on_a_plane() {
        let i = intr();
        let obs = depth_to_observation(&vec![1500u16; 32 * 24], &vec![true; 32 * 24], &i, &CameraPose::identity()).unwrap();
        assert_eq!(obs.points.len(), 32 * 24);
        for p in &obs.points {
            assert!((p.z() - 1.5).abs() < 1e-9);
        }
        obs.validate(1e-9).unwrap();
    }

    #[test]
    fn masked_out_and_zero_depth_pixels_are_unobserved() {
        let i = intr();
        let mut depth = vec![1000u16; 32 * 24];
        let mut mask = vec![true; 32 * 24];
        depth[5] = 0;
        mask[7] = false;
        let obs = depth_to_observation(&depth, &mask, &i, &CameraPose::identity()).unwrap();
        assert_eq!(obs.mask[5], 0.0);
        assert_eq!(obs.mask[7], 0.0);
        assert_eq!(obs.points.len(), 32 * 24 - 2);
        assert_eq!(obs.rays.len(), 32 * 24);
        assert!(depth_to_observation(&vec![0u16; 32 * 24], &mask, &i, &CameraPose::identity()).is_err());
    }

    #[test]
    fn points_reproject_to_their_pixels() {
        let i = intr();
        let pose = CameraPose::look_at(Vec3::new(0.3, -2.0, 0.5), Vec3::zero(), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let depth: Vec<u16> = (0..32 * 24).map(|_| rng.random_range(500..4000)).collect();
        let obs = depth_to_observation(&depth, &vec![true; 32 * 24], &i, &pose).unwrap();
        obs.validate(1e-9).unwrap();
        for (k, p) in obs.points.iter().enumerate() {
            let (u, v) = project(&i, &pose, p).unwrap();
            assert!((u - ((k % 32) as f64 + 0.5)).abs() < 0.5);
            assert!((v - ((k / 32) as f64 + 0.5)).abs() < 0.5);
            // z-depth in the camera frame matches the image value
            assert!((pose.world_to_camera(p).z() - depth[k] as f64 * 1e-3).abs() < 1e-9);
        }
    }

    fn cube_cloud() -> Vec<Vec3<f64>> {
        let mut pts = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    pts.push(Vec3::new(x + 3.0, y - 2.0, z + 0.5));
                }
            }
        }
        pts
    }

    #[test]
    fn symmetric_cloud_uses_center_of_mass() {
        let n = centralization(&cube_cloud(), DatasetKind::DepthCamera).unwrap();
        assert!(!n.used_box_center);
        let moved: Vec<_> = cube_cloud().iter().map(|p| n.apply(p)).collect();
        let max = moved.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((max - 0.5).abs() < 1e-12);
        let (mean, _) = mean_and_covariance(&moved);
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn lopsided_cloud_uses_box_center() {
        // a long bar densely sampled near one end
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for _ in 0..400 {
            pts.push(Vec3::new(rng.random_range(0.0..0.5), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)));
        }
        for _ in 0..20 {
            pts.push(Vec3::new(rng.random_range(0.5..4.0), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)));
        }
        let n = centralization(&pts, DatasetKind::DepthCamera).unwrap();
        assert!(n.used_box_center);
        assert!(centralization(&cube_cloud(), DatasetKind::Lidar).unwrap().used_box_center);
    }

    #[test]
    fn centralization_is_idempotent_and_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [DatasetKind::DepthCamera, DatasetKind::Lidar] {
            let pts: Vec<Vec3<f64>> = (0..300)
                .map(|_| Vec3::new(rng.random_range(1.0..3.0), rng.random_range(-4.0..-3.0), rng.random_range(0.0..0.3)))
                .collect();
            let n1 = centralization(&pts, kind).unwrap();
            let moved: Vec<_> = pts.iter().map(|p| n1.apply(p)).collect();
            let n2 = centralization(&moved, kind).unwrap();
            assert!(n2.center.iter().all(|c| c.abs() < 1e-9), "{n2:?}");
            assert!((n2.scale - 1.0).abs() < 1e-9);
            for (p, q) in pts.iter().zip(&moved) {
                assert!(n1.invert(q).distance(p) < 1e-9);
            }
        }
    }

    #[test]
    fn coincident_points_are_rejected() {
        assert!(centralization(&[Vec3::new(1.0, 1.0, 1.0); 6], DatasetKind::DepthCamera).is_err());
        assert!(centralization(&[Vec3::new(1.0, 1.0, 1.0); 3], DatasetKind::DepthCamera).is_err());
    }

    #[test]
    fn normalized_observation_keeps_invariants() {
        let i = intr();
        let pose = CameraPose::look_at(Vec3::new(0.0, -2.0, 0.5), Vec3::zero(), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let mut depth = vec![0u16; 32 * 24];
        for v in 8..16 {
            for u in 10..20 {
                depth[v * 32 + u] = 2000 + (u * 7 + v * 3) as u16;
            }
        }
        let mask: Vec<bool> = depth.iter().map(|d| *d > 0).collect();
        let mut obs = depth_to_observation(&depth, &mask, &i, &pose).unwrap();
        obs.plane = Plane::new(Vec3::new(0.0, 0.0, 1.0), 0.4).unwrap();
        let (n, out) = centralize_and_scale(&obs).unwrap();
        out.validate(1e-9).unwrap();
        let max = out.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((max - 0.5).abs() < 1e-12);
        // points on the plane stay on the transformed plane
        let on = Vec3::new(0.3, 0.7, -0.4);
        assert!(out.plane.signed_distance(&n.apply(&on)).abs() < 1e-12);
        for (p, q) in obs.points.iter().zip(&out.points) {
            assert!(out.to_sensor_frame(q).distance(p) < 1e-9);
        }
    }

    #[test]
    fn lidar_observation_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3<f64>> = (0..500)
            .map(|_| Vec3::new(rng.random_range(8.0..9.0), rng.random_range(-1.0..1.0), rng.random_range(-1.5..0.0)))
            .collect();
        let obs = lidar_observation(&pts, LidarFov::default()).unwrap();
        obs.validate(1e-9).unwrap();
        assert!(obs.observed_count() > 50);
        assert!(obs.mask.iter().any(|m| *m == 0.0));
        let SensorModel::Lidar(img) = &obs.sensor else { panic!() };
        assert_eq!(obs.rays.len(), img.crop_width() * LIDAR_ROWS);
        assert!(obs.pose.principal_axis().x() > 0.9);
    }

    #[test]
    fn intrinsics_and_pose_files() {
        let i: CameraIntrinsics<f64> = parse_intrinsics("# redwood\n525 525 319.5 239.5\n640 480\n", "k").unwrap();
        assert_eq!((i.fx, i.cx, i.width, i.height), (525.0, 319.5, 640, 480));
        assert!(parse_intrinsics::<f64>("525 525 319.5\n640 480\n", "k").is_err());
        assert!(parse_intrinsics::<f64>("525 525 319.5 239.5\n640.5 480\n", "k").is_err());
        let p: CameraPose<f64> = parse_pose("1 0 0 0.5\n0 1 0 0\n0 0 1 -2\n0 0 0 1\n", "pose").unwrap();
        assert_eq!(p.translation, Vec3::new(0.5, 0.0, -2.0));
        assert!(parse_pose::<f64>("2 0 0 0\n0 1 0 0\n0 0 1 0\n", "pose").is_err());
    }

    #[test]
    fn point_files() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0, 2.0, 1.0 / 3.0), Vec3::new(5.0, 6.0, 7.0)];
        let path = dir.path().join("p.ply");
        save_points(&path, &pts).unwrap();
        assert_eq!(load_points::<f64>(&path).unwrap(), pts);
        let xyz = dir.path().join("p.xyz");
        std::fs::write(&xyz, "# x y z\n1 2 3\n4 5 6\n").unwrap();
        assert_eq!(load_points::<f64>(&xyz).unwrap().len(), 2);
    }

    #[test]
    fn png_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let depth = image::ImageBuffer::<image::Luma<u16>, _>::from_fn(4, 3, |x, y| image::Luma([(x * 1000 + y) as u16]));
        depth.save(dir.path().join("d.png")).unwrap();
        let (w, h, d) = load_depth_png(&dir.path().join("d.png")).unwrap();
        assert_eq!((w, h, d[1 * 4 + 2]), (4, 3, 2001));
        let mask = image::GrayImage::from_fn(4, 3, |x, _| image::Luma([if x > 1 { 255 } else { 0 }]));
        mask.save(dir.path().join("m.png")).unwrap();
        let (_, _, m) = load_mask_png(&dir.path().join("m.png")).unwrap();
        assert_eq!(m[..4], [false, false, true, true]);
        assert!(load_depth_png(&dir.path().join("m.png")).is_err());
    }
}

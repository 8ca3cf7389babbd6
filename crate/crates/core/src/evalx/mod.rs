//! Surface extraction and evaluation: marching cubes, Chamfer distance, ICP,
//! surface sampling, mesh files and debug image dumps.

mod marching;

pub use marching::marching_cubes;

use std::collections::HashMap;
use std::path::Path;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ingest::ply::{self, PlyData};
use crate::linalg::{Mat3, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.triangles.iter().flatten().any(|i| *i >= n) {
            return Err(invalid("triangle index out of range"));
        }
        Ok(())
    }

    fn corners(&self, t: &[usize; 3]) -> [Vec3<f64>; 3] {
        t.map(|i| Vec3::from_f64(self.vertices[i]))
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V - E + F` over vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for i in self.triangles.iter().flatten() {
            used[*i] = true;
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        self.edge_counts().values().all(|c| *c == 2)
    }

    /// Volume enclosed by a closed, outward-oriented mesh.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3<f64>) -> Vec3<f64>) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| f(&Vec3::from_f64(*v)).0).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Binary little-endian PLY with `float` vertices.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let data = PlyData { vertices: self.vertices.clone(), faces: self.triangles.clone() };
        ply::write_ply_binary(std::io::BufWriter::new(std::fs::File::create(path)?), &data)
    }

    pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
        let d = ply::read_ply_file(path)?;
        let m = TriangleMesh { vertices: d.vertices, triangles: d.faces };
        m.validate()?;
        Ok(m)
    }
}

/// `n` points uniformly distributed over the mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3<f64>>> {
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if mesh.triangles.is_empty() || total <= 0.0 {
        return Err(invalid("cannot sample an empty mesh"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x = rng.random::<f64>() * total;
            let i = cumulative.partition_point(|c| *c <= x).min(cumulative.len() - 1);
            let [a, b, c] = mesh.corners(&mesh.triangles[i]);
            let (r1, r2) = (rng.random::<f64>().sqrt(), rng.random::<f64>());
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect())
}

type Tree = ImmutableKdTree<f64, u32, 3, 32>;

fn build_tree(points: &[Vec3<f64>]) -> Tree {
    let raw: Vec<[f64; 3]> = points.iter().map(|p| p.0).collect();
    Tree::new_from_slice(&raw)
}

fn mean_nearest(from: &[Vec3<f64>], tree: &Tree) -> f64 {
    from.iter().map(|p| tree.nearest_one::<SquaredEuclidean>(&p.0).distance.sqrt()).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance in millimetres for inputs in metres:
/// `0.5 (mean_a min_b |a-b| + mean_b min_a |b-a|) * 1000`.
pub fn chamfer_mm(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("chamfer distance needs two non-empty point sets"));
    }
    let (ta, tb) = (build_tree(a), build_tree(b));
    Ok(0.5 * (mean_nearest(a, &tb) + mean_nearest(b, &ta)) * 1000.0)
}

/// Quadratic-time reference for [`chamfer_mm`].
pub fn chamfer_mm_brute_force(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("chamfer distance needs two non-empty point sets"));
    }
    let one_way = |from: &[Vec3<f64>], to: &[Vec3<f64>]| {
        from.iter()
            .map(|p| to.iter().map(|q| (*p - *q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)) * 1000.0)
}

/// `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Mat3::identity(), translation: Vec3::zero() }
    }

    pub fn apply(&self, p: &Vec3<f64>) -> Vec3<f64> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul_mat(&first.rotation),
            translation: self.apply(&first.translation),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub converged: bool,
    pub rms: f64,
    pub iterations: usize,
    /// RMS after each accepted iteration, starting with the initial one.
    pub rms_history: Vec<f64>,
}

fn correspondence_rms(src: &[Vec3<f64>], t: &RigidTransform, tree: &Tree, target: &[Vec3<f64>]) -> (f64, Vec<Vec3<f64>>) {
    let mut sum = 0.0;
    let matched = src
        .iter()
        .map(|p| {
            let nn = tree.nearest_one::<SquaredEuclidean>(&t.apply(p).0);
            sum += nn.distance;
            target[nn.item as usize]
        })
        .collect();
    ((sum / src.len() as f64).sqrt(), matched)
}

/// Best rigid map of `src` onto `dst` (paired) by SVD; `None` when the
/// source points are collinear.
pub fn kabsch(src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> Option<RigidTransform> {
    let n = src.len() as f64;
    let mean = |pts: &[Vec3<f64>]| {
        let mut s = Vec3::zero();
        for p in pts {
            s += *p;
        }
        s * (1.0 / n)
    };
    let (ms, md) = (mean(src), mean(dst));
    let mut h = Matrix3::<f64>::zeros();
    let mut spread = Matrix3::<f64>::zeros();
    for (p, q) in src.iter().zip(dst) {
        let a = Vector3::from((*p - ms).0);
        let b = Vector3::from((*q - md).0);
        h += a * b.transpose();
        spread += a * a.transpose();
    }
    let eig = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if ev[1] <= 1e-12 * ev[2].max(1e-300) {
        return None;
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut v = vt.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        v.column_mut(2).scale_mut(-1.0);
        r = v * u.transpose();
    }
    let rotation = Mat3([
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ]);
    let translation = md - rotation.mul_vec(&ms);
    Some(RigidTransform { rotation, translation })
}

/// Point-to-point ICP from `init`, stopping when the RMS changes by less
/// than `tol` or after `max_iters` updates.
pub fn icp_align(
    source: &[Vec3<f64>],
    target: &[Vec3<f64>],
    init: RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(invalid("ICP needs at least 3 points on each side"));
    }
    let tree = build_tree(target);
    let mut current = init;
    let (mut rms, mut matched) = correspondence_rms(source, &current, &tree, target);
    let mut history = vec![rms];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        let Some(step) = kabsch(source, &matched) else {
            break;
        };
        let (new_rms, new_matched) = correspondence_rms(source, &step, &tree, target);
        iterations += 1;
        if new_rms > rms {
            // the closed-form step cannot raise the paired error; a rise means
            // the correspondences flipped, so stop here
            converged = (rms - new_rms).abs() < tol;
            break;
        }
        let change = rms - new_rms;
        current = step;
        rms = new_rms;
        matched = new_matched;
        history.push(rms);
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult { transform: current, converged, rms, iterations, rms_history: history })
}

/// 8-bit RGB PNG of an `H x W x 3` image in `[0, 1]`.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(invalid("image buffer does not match its size"));
    }
    let bytes: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::RgbImage::from_raw(width as u32, height as u32, bytes)
        .expect("size checked")
        .save(path)?;
    Ok(())
}

/// 16-bit PNG of depth in millimetres; `unit_to_mm` converts the input.
pub fn write_depth_png(path: &Path, width: usize, height: usize, depth: &[f64], unit_to_mm: f64) -> Result<()> {
    if depth.len() != width * height {
        return Err(invalid("depth buffer does not match its size"));
    }
    let raw: Vec<u16> = depth.iter().map(|d| (d * unit_to_mm).round().clamp(0.0, u16::MAX as f64) as u16).collect();
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, raw)
        .expect("size checked")
        .save(path)?;
    Ok(())
}

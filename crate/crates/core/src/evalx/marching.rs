//! Zero level-set extraction on a regular grid.
//!
//! Each grid cell is split into six tetrahedra along its main diagonal (the
//! Kuhn split, which tiles space consistently), and each tetrahedron is
//! polygonized on its own. Vertices are shared through the grid edge they
//! lie on, so the output is watertight wherever the surface stays inside
//! the bounds, and there are no ambiguous cases.

use std::collections::HashMap;

use super::TriangleMesh;
use crate::error::{invalid, Result};
use crate::linalg::{Aabb, Vec3};

/// Corner offsets of a cell, bit 0 = x, bit 1 = y, bit 2 = z.
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Six tetrahedra, one per axis order, as corner indices.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Relative edge position below which a crossing snaps to the grid node.
const SNAP: f64 = 1e-6;

/// Extracts the `f = 0` surface of `f` sampled on a `resolution^3` cell grid
/// over `bounds`. `f` receives batches of points (one z-slab at a time).
/// Triangles are oriented so their normals point toward `f > 0`.
pub fn marching_cubes<F>(mut f: F, bounds: &Aabb<f64>, resolution: usize) -> Result<TriangleMesh>
where
    F: FnMut(&[Vec3<f64>]) -> Vec<f64>,
{
    if resolution < 2 {
        return Err(invalid("marching cubes needs at least 2 cells per axis"));
    }
    if bounds.is_degenerate() {
        return Err(invalid("marching cubes bounds are degenerate"));
    }
    let n = resolution + 1;
    let step = [0, 1, 2].map(|k| (bounds.max.0[k] - bounds.min.0[k]) / resolution as f64);
    let grid_point = |i: usize, j: usize, k: usize| {
        Vec3::new(
            bounds.min.0[0] + i as f64 * step[0],
            bounds.min.0[1] + j as f64 * step[1],
            bounds.min.0[2] + k as f64 * step[2],
        )
    };
    let mut values = Vec::with_capacity(n * n * n);
    let mut slab = Vec::with_capacity(n * n);
    for k in 0..n {
        slab.clear();
        for j in 0..n {
            for i in 0..n {
                slab.push(grid_point(i, j, k));
            }
        }
        let v = f(&slab);
        assert_eq!(v.len(), slab.len(), "field callback returned a wrong-sized batch");
        // exact zeros are treated as outside so every crossing is strict
        values.extend(v.into_iter().map(|x| if x == 0.0 { f64::MIN_POSITIVE } else { x }));
    }
    let index = |i: usize, j: usize, k: usize| (k * n + j) * n + i;

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertex_on = |a: usize, b: usize, pa: Vec3<f64>, pb: Vec3<f64>, fa: f64, fb: f64, mesh: &mut TriangleMesh| {
        // crossings within SNAP of a node collapse onto it and are shared by
        // every edge leaving that node, which avoids sliver triangles
        let t = fa / (fa - fb);
        let key = if t < SNAP {
            (a, usize::MAX)
        } else if t > 1.0 - SNAP {
            (b, usize::MAX)
        } else {
            (a.min(b), a.max(b))
        };
        *edge_vertex.entry(key).or_insert_with(|| {
            let p = if key.1 != usize::MAX {
                pa + (pb - pa) * t
            } else if key.0 == a {
                pa
            } else {
                pb
            };
            mesh.vertices.push(p.0);
            mesh.vertices.len() - 1
        })
    };

    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let ids = CORNER.map(|c| index(i + c[0], j + c[1], k + c[2]));
                let vals = ids.map(|id| values[id]);
                if vals.iter().all(|v| *v > 0.0) || vals.iter().all(|v| *v < 0.0) {
                    continue;
                }
                let pts = CORNER.map(|c| grid_point(i + c[0], j + c[1], k + c[2]));
                for tet in TETS {
                    let inside: Vec<usize> = tet.iter().copied().filter(|c| vals[*c] < 0.0).collect();
                    let outside: Vec<usize> = tet.iter().copied().filter(|c| vals[*c] > 0.0).collect();
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let mut cut = |a: usize, b: usize, mesh: &mut TriangleMesh| {
                        vertex_on(ids[a], ids[b], pts[a], pts[b], vals[a], vals[b], mesh)
                    };
                    // direction from inside toward outside, for orientation
                    let centroid = |cs: &[usize]| {
                        let mut s = Vec3::zero();
                        for c in cs {
                            s += pts[*c];
                        }
                        s * (1.0 / cs.len() as f64)
                    };
                    let outward = centroid(&outside) - centroid(&inside);
                    let tris: Vec<[usize; 3]> = match (inside.len(), outside.len()) {
                        (1, 3) => {
                            let a = inside[0];
                            vec![[cut(a, outside[0], &mut mesh), cut(a, outside[1], &mut mesh), cut(a, outside[2], &mut mesh)]]
                        }
                        (3, 1) => {
                            let b = outside[0];
                            vec![[cut(inside[0], b, &mut mesh), cut(inside[1], b, &mut mesh), cut(inside[2], b, &mut mesh)]]
                        }
                        (2, 2) => {
                            let (a0, a1, b0, b1) = (inside[0], inside[1], outside[0], outside[1]);
                            // quad a0b0 - a0b1 - a1b1 - a1b0
                            let q = [
                                cut(a0, b0, &mut mesh),
                                cut(a0, b1, &mut mesh),
                                cut(a1, b1, &mut mesh),
                                cut(a1, b0, &mut mesh),
                            ];
                            vec![[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                        }
                        _ => unreachable!("a crossing tetrahedron has 1 to 3 inside corners"),
                    };
                    for mut t in tris {
                        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                            continue;
                        }
                        let [a, b, c] = t.map(|v| Vec3::from_f64(mesh.vertices[v]));
                        let normal = (b - a).cross(&(c - a));
                        if normal.norm() <= 1e-12 {
                            continue;
                        }
                        if normal.dot(&outward) < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

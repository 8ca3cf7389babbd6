//! Small fixed-size vector and matrix types used by the geometry code.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Scalar> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Vec3([T::of(v[0]), T::of(v[1]), T::of(v[2])])
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.0[0].f64(), self.0[1].f64(), self.0[2].f64()]
    }

    #[inline]
    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    #[inline]
    pub fn x(&self) -> T {
        self.0[0]
    }
    #[inline]
    pub fn y(&self) -> T {
        self.0[1]
    }
    #[inline]
    pub fn z(&self) -> T {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        let [a1, a2, a3] = self.0;
        let [b1, b2, b3] = o.0;
        Vec3([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; `None` for a zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(*self * (T::one() / n))
        } else {
            None
        }
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn distance(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Scalar> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Mat3([
            [c0.0[0], c1.0[0], c2.0[0]],
            [c0.0[1], c1.0[1], c2.0[1]],
            [c0.0[2], c1.0[2], c2.0[2]],
        ])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3(self.0[i])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        Mat3(out)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut m = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        m
    }

    pub fn frobenius_distance(&self, o: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let d = self.0[i][j] - o.0[i][j];
                s += d * d;
            }
        }
        s.sqrt()
    }

    pub fn to_f64(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = self.0[i][j].f64();
            }
        }
        out
    }

    pub fn from_f64(m: [[f64; 3]; 3]) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = T::of(m[i][j]);
            }
        }
        Mat3(out)
    }
}

impl<T: Scalar> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}

impl<T: Scalar> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        self.mul_vec(&v)
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Aabb { min, max }
    }

    pub fn cube(half: T) -> Self {
        Aabb {
            min: Vec3([-half; 3]),
            max: Vec3([half; 3]),
        }
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::of(0.5)
    }

    pub fn is_degenerate(&self) -> bool {
        let e = self.extent();
        !(e.0.iter().all(|v| *v > T::zero() && v.is_finite()))
    }

    pub fn contains(&self, p: &Vec3<T>) -> bool {
        (0..3).all(|i| p.0[i] >= self.min.0[i] && p.0[i] <= self.max.0[i])
    }

    pub fn corners(&self) -> [Vec3<T>; 8] {
        let mut out = [Vec3::zero(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            for i in 0..3 {
                c.0[i] = if k >> i & 1 == 0 { self.min.0[i] } else { self.max.0[i] };
            }
        }
        out
    }
}

/// Symmetric 3x3 eigen-decomposition in double precision.
///
/// Returns eigenvalues in ascending order with matching unit eigenvectors.
pub fn symmetric_eigen(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mat = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let eig = nalgebra::SymmetricEigen::new(mat);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vals = [0.0; 3];
    let mut vecs = [[0.0; 3]; 3];
    for (slot, &k) in order.iter().enumerate() {
        vals[slot] = eig.eigenvalues[k];
        let c = eig.eigenvectors.column(k);
        vecs[slot] = [c[0], c[1], c[2]];
    }
    (vals, vecs)
}

/// Mean and covariance of a point set, in double precision.
pub fn mean_and_covariance<T: Scalar>(points: &[Vec3<T>]) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = points.len().max(1) as f64;
    let mut mean = [0.0; 3];
    for p in points {
        let q = p.to_f64();
        for i in 0..3 {
            mean[i] += q[i];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let q = p.to_f64();
        let d = [q[0] - mean[0], q[1] - mean[1], q[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut cov {
        for v in row {
            *v /= n;
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_is_right_handed() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        let y = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(x.cross(&y), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn eigen_sorted_ascending() {
        let (vals, vecs) = symmetric_eigen([[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(vals, [1.0, 2.0, 3.0]);
        assert!((vecs[0][1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_has_no_direction() {
        assert!(Vec3::<f64>::zero().normalized().is_none());
    }
}

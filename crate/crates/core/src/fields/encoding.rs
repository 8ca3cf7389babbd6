use serde::{Deserialize, Serialize};

use crate::linalg::Vec3;
use crate::scalar::Scalar;

/// Frequency encoding `[x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub levels: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { levels: 6, include_input: true }
    }
}

impl EncodingConfig {
    pub fn output_dim(&self) -> usize {
        3 * usize::from(self.include_input) + 6 * self.levels
    }

    fn raw_dim(&self) -> usize {
        3 * usize::from(self.include_input)
    }

    /// Column of `sin(2^level x_axis)`; the cosine term sits 3 columns later.
    #[inline]
    pub(crate) fn sin_index(&self, level: usize, axis: usize) -> usize {
        self.raw_dim() + 6 * level + axis
    }
}

pub fn positional_encoding<T: Scalar>(x: &Vec3<T>, cfg: &EncodingConfig) -> Vec<T> {
    let mut out = vec![T::zero(); cfg.output_dim()];
    encode_into(x, cfg, &mut out);
    out
}

pub(crate) fn encode_into<T: Scalar>(x: &Vec3<T>, cfg: &EncodingConfig, out: &mut [T]) {
    if cfg.include_input {
        out[..3].copy_from_slice(&x.0);
    }
    let mut freq = T::one();
    for level in 0..cfg.levels {
        for axis in 0..3 {
            let (s, c) = (x.0[axis] * freq).sin_cos();
            let i = cfg.sin_index(level, axis);
            out[i] = s;
            out[i + 3] = c;
        }
        freq = freq + freq;
    }
}

/// Row-major `n x dim` encoding of a batch of points.
pub(crate) fn encode_batch<T: Scalar>(points: &[Vec3<T>], cfg: &EncodingConfig) -> Vec<T> {
    let dim = cfg.output_dim();
    let mut out = vec![T::zero(); points.len() * dim];
    for (p, row) in points.iter().zip(out.chunks_exact_mut(dim)) {
        encode_into(p, cfg, row);
    }
    out
}

/// `J^T g` for one encoded row: pulls a feature-space gradient back to xyz.
pub(crate) fn pullback<T: Scalar>(cfg: &EncodingConfig, encoded: &[T], grad: &[T]) -> Vec3<T> {
    let mut g = Vec3::zero();
    if cfg.include_input {
        g.0.copy_from_slice(&grad[..3]);
    }
    let mut freq = T::one();
    for level in 0..cfg.levels {
        for axis in 0..3 {
            let i = cfg.sin_index(level, axis);
            // d sin = freq cos, d cos = -freq sin
            g.0[axis] += freq * (encoded[i + 3] * grad[i] - encoded[i] * grad[i + 3]);
        }
        freq = freq + freq;
    }
    g
}

/// `J v` for one encoded row: pushes an xyz tangent into feature space.
pub(crate) fn pushforward<T: Scalar>(cfg: &EncodingConfig, encoded: &[T], v: &Vec3<T>, out: &mut [T]) {
    if cfg.include_input {
        out[..3].copy_from_slice(&v.0);
    }
    let mut freq = T::one();
    for level in 0..cfg.levels {
        for axis in 0..3 {
            let i = cfg.sin_index(level, axis);
            out[i] = freq * encoded[i + 3] * v.0[axis];
            out[i + 3] = -freq * encoded[i] * v.0[axis];
        }
        freq = freq + freq;
    }
}

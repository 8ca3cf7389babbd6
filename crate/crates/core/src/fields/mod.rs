//! Neural signed-distance and color fields.
//!
//! The SDF network is four ReLU linear layers; the color network is four
//! SiLU linear layers whose two middle layers carry skip connections, with a
//! sigmoid on the output. Both read the same frequency encoding of the
//! query point.

mod checkpoint;
mod encoding;
mod mlp;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoding::{positional_encoding, EncodingConfig};
pub use mlp::{sigmoid, Activation, Linear, Mlp, MlpBackward, MlpCache};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    pub width: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { encoding: EncodingConfig::default(), width: 96 }
    }
}

/// Weights of the SDF and color networks.
///
/// Also used as the gradient buffer for itself (see [`FieldParams::zeros_like`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldParams<T> {
    pub encoding: EncodingConfig,
    pub sdf: Mlp<T>,
    pub color: Mlp<T>,
}

impl<T: Scalar> FieldParams<T> {
    pub fn zeros(cfg: &FieldConfig) -> Self {
        let e = cfg.encoding.output_dim();
        let w = cfg.width;
        let sdf = Mlp {
            layers: vec![
                Linear::zeros(e, w, Activation::Relu, false),
                Linear::zeros(w, w, Activation::Relu, false),
                Linear::zeros(w, w, Activation::Relu, false),
                Linear::zeros(w, 1, Activation::Identity, false),
            ],
        };
        let color = Mlp {
            layers: vec![
                Linear::zeros(e, w, Activation::Silu, false),
                Linear::zeros(w, w, Activation::Silu, true),
                Linear::zeros(w, w, Activation::Silu, true),
                Linear::zeros(w, 3, Activation::Sigmoid, false),
            ],
        };
        FieldParams { encoding: cfg.encoding, sdf, color }
    }

    /// Uniform weights in `±scale / sqrt(fan_in)`, biases in `±scale`.
    pub fn random(cfg: &FieldConfig, scale: f64, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in p.sdf.layers.iter_mut().chain(p.color.layers.iter_mut()) {
            let bound = scale / (layer.in_dim as f64).sqrt();
            layer.weight.iter_mut().for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
            layer.bias.iter_mut().for_each(|b| *b = T::of(rng.random_range(-scale..scale)));
        }
        p
    }

    pub fn config(&self) -> FieldConfig {
        FieldConfig {
            encoding: self.encoding,
            width: self.sdf.layers.first().map_or(0, |l| l.out_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FieldParams {
            encoding: self.encoding,
            sdf: self.sdf.zeros_like(),
            color: self.color.zeros_like(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.sdf.parameter_count() + self.color.parameter_count()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.sdf.tensors().chain(self.color.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.sdf.tensors_mut().chain(self.color.tensors_mut())
    }

    /// Flattened copy of every parameter in storage order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().flatten().copied().collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.encoding == other.encoding
            && self.tensors().map(<[T]>::len).eq(other.tensors().map(<[T]>::len))
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> T {
        self.tensors().flatten().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }
}

/// SDF forward pass over a batch, retaining what the backward passes need.
#[derive(Clone, Debug)]
pub struct SdfForward<T> {
    encoded: Vec<T>,
    cache: MlpCache<T>,
}

impl<T: Scalar> SdfForward<T> {
    pub fn values(&self) -> &[T] {
        &self.cache.output
    }

    pub fn len(&self) -> usize {
        self.cache.rows
    }

    pub fn is_empty(&self) -> bool {
        self.cache.rows == 0
    }
}

/// Spatial gradients of the SDF plus the adjoints needed to differentiate
/// functions of them.
#[derive(Clone, Debug)]
pub struct SdfSpatial<T> {
    pub gradients: Vec<Vec3<T>>,
    pre_grads: Vec<Vec<T>>,
}

pub fn sdf_forward<T: Scalar>(params: &FieldParams<T>, points: &[Vec3<T>]) -> SdfForward<T> {
    let encoded = encoding::encode_batch(points, &params.encoding);
    let cache = params
        .sdf
        .forward(&encoded, points.len())
        .expect("encoding width matches sdf input");
    SdfForward { encoded, cache }
}

/// SDF values without retaining intermediates.
pub fn sdf_values<T: Scalar>(params: &FieldParams<T>, points: &[Vec3<T>]) -> Vec<T> {
    let encoded = encoding::encode_batch(points, &params.encoding);
    params
        .sdf
        .infer(&encoded, points.len())
        .expect("encoding width matches sdf input")
}

/// Accumulates `d(sum_i df_i * f_i)/d theta` into `grads`.
pub fn sdf_backward<T: Scalar>(
    params: &FieldParams<T>,
    fwd: &SdfForward<T>,
    df: &[T],
    grads: &mut FieldParams<T>,
) -> Result<()> {
    params.sdf.backward(&fwd.cache, df, &mut grads.sdf, false)?;
    Ok(())
}

/// Exact spatial gradients `grad_x f` at every point of the batch.
pub fn sdf_spatial<T: Scalar>(params: &FieldParams<T>, fwd: &SdfForward<T>) -> SdfSpatial<T> {
    let mut scratch = params.sdf.zeros_like();
    let ones = vec![T::one(); fwd.len()];
    let back = params
        .sdf
        .backward(&fwd.cache, &ones, &mut scratch, true)
        .expect("shapes consistent with forward");
    let dim = params.encoding.output_dim();
    let gradients = fwd
        .encoded
        .chunks_exact(dim)
        .zip(back.input_grad.chunks_exact(dim))
        .map(|(e, g)| encoding::pullback(&params.encoding, e, g))
        .collect();
    SdfSpatial { gradients, pre_grads: back.pre_grads.unwrap_or_default() }
}

/// Accumulates the parameter gradient of an objective that depends on the
/// spatial gradients, given `d objective / d grad_x f` per point.
pub fn sdf_spatial_backward<T: Scalar>(
    params: &FieldParams<T>,
    fwd: &SdfForward<T>,
    spatial: &SdfSpatial<T>,
    d_gradients: &[Vec3<T>],
    grads: &mut FieldParams<T>,
) -> Result<()> {
    if d_gradients.len() != fwd.len() {
        return Err(invalid("one gradient adjoint per point required"));
    }
    let dim = params.encoding.output_dim();
    let mut tangent = vec![T::zero(); fwd.len() * dim];
    for ((row, e), v) in tangent
        .chunks_exact_mut(dim)
        .zip(fwd.encoded.chunks_exact(dim))
        .zip(d_gradients)
    {
        encoding::pushforward(&params.encoding, e, v, row);
    }
    params
        .sdf
        .input_gradient_param_grads(&fwd.cache, &spatial.pre_grads, &tangent, &mut grads.sdf)
}

/// Single-point SDF value and spatial gradient.
pub fn sdf_eval<T: Scalar>(params: &FieldParams<T>, x: &Vec3<T>) -> (T, Vec3<T>) {
    let fwd = sdf_forward(params, std::slice::from_ref(x));
    let spatial = sdf_spatial(params, &fwd);
    (fwd.values()[0], spatial.gradients[0])
}

/// Color forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ColorForward<T> {
    cache: MlpCache<T>,
}

impl<T: Scalar> ColorForward<T> {
    /// Row-major `n x 3` colors in `[0, 1]`.
    pub fn values(&self) -> &[T] {
        &self.cache.output
    }
}

pub fn color_forward<T: Scalar>(params: &FieldParams<T>, points: &[Vec3<T>]) -> ColorForward<T> {
    let encoded = encoding::encode_batch(points, &params.encoding);
    let cache = params
        .color
        .forward(&encoded, points.len())
        .expect("encoding width matches color input");
    ColorForward { cache }
}

pub fn color_backward<T: Scalar>(
    params: &FieldParams<T>,
    fwd: &ColorForward<T>,
    d_rgb: &[T],
    grads: &mut FieldParams<T>,
) -> Result<()> {
    params.color.backward(&fwd.cache, d_rgb, &mut grads.color, false)?;
    Ok(())
}

pub fn color_eval<T: Scalar>(params: &FieldParams<T>, x: &Vec3<T>) -> [T; 3] {
    let fwd = color_forward(params, std::slice::from_ref(x));
    let v = fwd.values();
    [v[0], v[1], v[2]]
}

/// Laplace-CDF density parameters: `sigma = alpha * Psi_beta(-f)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> Default for DensityParams<T> {
    fn default() -> Self {
        DensityParams { alpha: T::of(100.0), beta: T::of(1e-3) }
    }
}

impl<T: Scalar> DensityParams<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha > T::zero() && beta > T::zero()) {
            return Err(invalid("density alpha and beta must be positive"));
        }
        Ok(DensityParams { alpha, beta })
    }
}

/// Density of a signed distance under the zero-mean Laplace CDF.
#[inline]
pub fn density_from_sdf<T: Scalar>(f: T, dp: &DensityParams<T>) -> T {
    let half = T::of(0.5);
    let s = -f;
    let cdf = if s <= T::zero() {
        half * (s / dp.beta).exp()
    } else {
        T::one() - half * (-s / dp.beta).exp()
    };
    dp.alpha * cdf
}

/// `d sigma / d f`, always non-positive.
#[inline]
pub fn density_derivative<T: Scalar>(f: T, dp: &DensityParams<T>) -> T {
    let pdf = (-f.abs() / dp.beta).exp() / (T::of(2.0) * dp.beta);
    -dp.alpha * pdf
}

/// Geometric initialization: the SDF network approximates `|x| - radius`.
///
/// Only the raw-coordinate inputs of the first layer are non-zero, so the
/// hidden stack is positively homogeneous in `x`; the output layer is then
/// rescaled so its mean slope over a fixed set of directions is one.
pub fn sphere_init<T: Scalar>(cfg: &FieldConfig, radius: T, seed: u64) -> FieldParams<T> {
    let mut p = FieldParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = cfg.width;
    let jitter = Normal::new(0.0, 1e-3).expect("finite std");

    let raw_cols: Vec<usize> = if cfg.encoding.include_input {
        vec![0, 1, 2]
    } else if cfg.encoding.levels > 0 {
        (0..3).map(|a| cfg.encoding.sin_index(0, a)).collect()
    } else {
        Vec::new()
    };
    // First-layer rows point along a randomly rotated Fibonacci sphere, so the
    // summed ReLU responses approximate a multiple of |x| in every direction.
    let rot = random_rotation(&mut rng);
    {
        let first = &mut p.sdf.layers[0];
        for (row, d) in fibonacci_directions(first.out_dim).into_iter().enumerate() {
            let d = rot.mul_vec(&d);
            for (k, &c) in raw_cols.iter().enumerate() {
                first.weight[row * first.in_dim + c] = T::of(d.0[k]);
            }
        }
    }
    for layer in &mut p.sdf.layers[1..3] {
        for r in 0..layer.out_dim {
            for c in 0..layer.in_dim {
                let base = if r == c { 1.0 } else { 0.0 };
                layer.weight[r * layer.in_dim + c] = T::of(base + jitter.sample(&mut rng));
            }
        }
    }
    {
        let last = &mut p.sdf.layers[3];
        let out = Normal::new(1.0 / width as f64, 1e-4 / width as f64).expect("finite std");
        last.weight.iter_mut().for_each(|w| *w = T::of(out.sample(&mut rng)));
        last.bias[0] = -radius;
    }

    // directions on a Fibonacci sphere
    let n_dirs = 512;
    let dirs: Vec<Vec3<T>> = fibonacci_directions(n_dirs).iter().map(|d| Vec3::from_f64(d.0)).collect();
    let slope: f64 = sdf_values(&p, &dirs)
        .iter()
        .map(|f| (*f + radius).f64())
        .sum::<f64>()
        / n_dirs as f64;
    if slope > 1e-12 {
        let s = T::of(1.0 / slope);
        p.sdf.layers[3].weight.iter_mut().for_each(|w| *w *= s);
    }

    for layer in p.color.layers.iter_mut() {
        let bound = 1.0 / (layer.in_dim as f64).sqrt();
        layer.weight.iter_mut().for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
        layer.bias.iter_mut().for_each(|b| *b = T::of(rng.random_range(-bound..bound)));
    }
    let last = p.color.layers.last_mut().expect("color net has layers");
    last.weight.iter_mut().for_each(|w| *w *= T::of(0.1));
    last.bias.iter_mut().for_each(|b| *b = T::zero());
    p
}

fn fibonacci_directions(n: usize) -> Vec<Vec3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Uniform random rotation from a normalized Gaussian quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let mut q = [0.0f64; 4];
    let mut len = 0.0;
    while len < 1e-6 {
        q = [n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng)];
        len = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let [w, x, y, z] = q.map(|v| v / len);
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

//! Differentiable volume rendering of SDF-defined radiance fields.
//!
//! Rendering runs in two passes. The first evaluates only the SDF along each
//! ray, in chunks, and stops a ray once its transmittance drops below
//! `prune_eps`. The second re-evaluates with retained intermediates only the
//! samples whose weight or density gradient can exceed `prune_eps`; the rest
//! enter the composite with their first-pass density and zero color.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{
    color_backward, color_forward, density_derivative, density_from_sdf, sdf_backward, sdf_forward, sdf_values,
    ColorForward, DensityParams, FieldParams, SdfForward,
};
use crate::geometry::{backproject, CameraIntrinsics, CameraPose, Ray};
use crate::linalg::Vec3;
use crate::scalar::Scalar;

/// Floor on the opacity when normalizing expected depth.
pub const DEPTH_OPACITY_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig<T> {
    pub near: T,
    pub far: T,
    pub samples: usize,
    pub stratified: bool,
}

impl<T: Scalar> SamplingConfig<T> {
    pub fn new(near: T, far: T, samples: usize, stratified: bool) -> Result<Self> {
        let cfg = SamplingConfig { near, far, samples, stratified };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `distance ± 1` around an object at the origin seen from `distance`.
    pub fn around(distance: T, samples: usize, stratified: bool) -> Result<Self> {
        Self::new((distance - T::one()).max(T::zero()), distance + T::one(), samples, stratified)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near >= T::zero() && self.near < self.far && self.far.is_finite()) {
            return Err(invalid("sampling bounds must satisfy 0 <= near < far"));
        }
        if self.samples < 2 {
            return Err(invalid("at least two samples per ray are required"));
        }
        Ok(())
    }
}

/// Distances along a ray: bin midpoints, or one uniform draw per bin.
pub fn sample_distances<T: Scalar, R: Rng>(cfg: &SamplingConfig<T>, rng: &mut R) -> Vec<T> {
    let n = cfg.samples;
    let width = (cfg.far - cfg.near) / T::of(n as f64);
    (0..n)
        .map(|i| {
            let u = if cfg.stratified { T::of(rng.random::<f64>()) } else { T::of(0.5) };
            (cfg.near + (T::of(i as f64) + u) * width).min(cfg.far)
        })
        .collect()
}

pub fn sample_distances_seeded<T: Scalar>(cfg: &SamplingConfig<T>, seed: u64) -> Vec<T> {
    sample_distances(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite<T> {
    pub rgb: [T; 3],
    pub opacity: T,
    pub depth: T,
    pub weights: Vec<T>,
}

fn segment_lengths<T: Scalar>(mu: &[T]) -> Vec<T> {
    let n = mu.len();
    let mut d: Vec<T> = mu.windows(2).map(|w| w[1] - w[0]).collect();
    d.push(d[n - 2]);
    d
}

/// Alpha compositing of per-sample densities and colors along one ray.
pub fn composite<T: Scalar>(sigma: &[T], rgb: &[[T; 3]], mu: &[T]) -> Result<Composite<T>> {
    if sigma.len() != rgb.len() || sigma.len() != mu.len() || mu.len() < 2 {
        return Err(invalid("composite needs equal-length arrays with at least two samples"));
    }
    if mu.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("sample distances must be strictly increasing"));
    }
    let delta = segment_lengths(mu);
    Ok(composite_unchecked(sigma, rgb, mu, &delta))
}

fn composite_unchecked<T: Scalar>(sigma: &[T], rgb: &[[T; 3]], mu: &[T], delta: &[T]) -> Composite<T> {
    let mut weights = Vec::with_capacity(sigma.len());
    let mut acc = T::zero();
    let mut out = [T::zero(); 3];
    let (mut opacity, mut num) = (T::zero(), T::zero());
    for i in 0..sigma.len() {
        let tau = sigma[i] * delta[i];
        let w = (-acc).exp() * -(-tau).exp_m1();
        acc += tau;
        for c in 0..3 {
            out[c] += w * rgb[i][c];
        }
        opacity += w;
        num += w * mu[i];
        weights.push(w);
    }
    let depth = num / opacity.max(T::of(DEPTH_OPACITY_FLOOR));
    Composite { rgb: out, opacity, depth, weights }
}

/// Gradients of a scalar loss with respect to per-sample densities and
/// colors, given its gradients with respect to the composite outputs.
pub fn composite_backward<T: Scalar>(
    sigma: &[T],
    rgb: &[[T; 3]],
    mu: &[T],
    d_rgb: [T; 3],
    d_opacity: T,
    d_depth: T,
) -> (Vec<T>, Vec<[T; 3]>) {
    let delta = segment_lengths(mu);
    let c = composite_unchecked(sigma, rgb, mu, &delta);
    composite_backward_with(sigma, rgb, mu, &delta, &c, d_rgb, d_opacity, d_depth)
}

#[allow(clippy::too_many_arguments)]
fn composite_backward_with<T: Scalar>(
    sigma: &[T],
    rgb: &[[T; 3]],
    mu: &[T],
    delta: &[T],
    c: &Composite<T>,
    d_rgb: [T; 3],
    d_opacity: T,
    d_depth: T,
) -> (Vec<T>, Vec<[T; 3]>) {
    let n = sigma.len();
    let floor = T::of(DEPTH_OPACITY_FLOOR);
    let denom = c.opacity.max(floor);
    let d_num = d_depth / denom;
    let num = c.depth * denom;
    let mut d_op = d_opacity;
    if c.opacity > floor {
        d_op -= d_depth * num / (c.opacity * c.opacity);
    }
    // q_i = dL/dw_i
    let q: Vec<T> = (0..n)
        .map(|i| d_rgb[0] * rgb[i][0] + d_rgb[1] * rgb[i][1] + d_rgb[2] * rgb[i][2] + d_op + d_num * mu[i])
        .collect();
    let mut d_sigma = vec![T::zero(); n];
    let mut suffix = T::zero();
    let mut acc = T::zero();
    let mut t_next = Vec::with_capacity(n);
    for i in 0..n {
        acc += sigma[i] * delta[i];
        t_next.push((-acc).exp());
    }
    for k in (0..n).rev() {
        let d_tau = t_next[k] * q[k] - suffix;
        d_sigma[k] = d_tau * delta[k];
        suffix += c.weights[k] * q[k];
    }
    let d_color = c.weights.iter().map(|w| [*w * d_rgb[0], *w * d_rgb[1], *w * d_rgb[2]]).collect();
    (d_sigma, d_color)
}

/// Source of SDF values and colors for rendering.
pub trait RenderField<T: Scalar> {
    type SdfTape;
    type ColorTape;

    fn sdf(&self, points: &[Vec3<T>]) -> Vec<T>;
    fn sdf_with_tape(&self, points: &[Vec3<T>]) -> (Vec<T>, Self::SdfTape);
    fn colors_with_tape(&self, points: &[Vec3<T>]) -> (Vec<[T; 3]>, Self::ColorTape);
}

impl<T: Scalar> RenderField<T> for FieldParams<T> {
    type SdfTape = SdfForward<T>;
    type ColorTape = ColorForward<T>;

    fn sdf(&self, points: &[Vec3<T>]) -> Vec<T> {
        sdf_values(self, points)
    }

    fn sdf_with_tape(&self, points: &[Vec3<T>]) -> (Vec<T>, SdfForward<T>) {
        let fwd = sdf_forward(self, points);
        (fwd.values().to_vec(), fwd)
    }

    fn colors_with_tape(&self, points: &[Vec3<T>]) -> (Vec<[T; 3]>, ColorForward<T>) {
        let fwd = color_forward(self, points);
        let rgb = fwd.values().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        (rgb, fwd)
    }
}

/// Exact sphere SDF with a normal-coded color, for fixtures and oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticSphere<T> {
    pub center: Vec3<T>,
    pub radius: T,
}

impl<T: Scalar> AnalyticSphere<T> {
    pub fn new(center: Vec3<T>, radius: T) -> Self {
        AnalyticSphere { center, radius }
    }

    pub fn distance(&self, p: &Vec3<T>) -> T {
        (*p - self.center).norm() - self.radius
    }

    /// Distance along `ray` to the first surface crossing, if any.
    pub fn intersect(&self, ray: &Ray<T>) -> Option<T> {
        let oc = ray.origin - self.center;
        let b = oc.dot(&ray.direction);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < T::zero() {
            return None;
        }
        let s = -b - disc.sqrt();
        (s >= T::zero()).then_some(s)
    }

    pub fn color(&self, p: &Vec3<T>) -> [T; 3] {
        let half = T::of(0.5);
        let n = (*p - self.center).normalized().unwrap_or_else(Vec3::zero);
        [half + half * n.x(), half + half * n.y(), half + half * n.z()]
    }
}

impl<T: Scalar> RenderField<T> for AnalyticSphere<T> {
    type SdfTape = ();
    type ColorTape = ();

    fn sdf(&self, points: &[Vec3<T>]) -> Vec<T> {
        points.iter().map(|p| self.distance(p)).collect()
    }

    fn sdf_with_tape(&self, points: &[Vec3<T>]) -> (Vec<T>, ()) {
        (self.sdf(points), ())
    }

    fn colors_with_tape(&self, points: &[Vec3<T>]) -> (Vec<[T; 3]>, ()) {
        (points.iter().map(|p| self.color(p)).collect(), ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions<T> {
    /// Transmittance / weight / density-gradient threshold below which
    /// samples are skipped. Zero disables pruning.
    pub prune_eps: T,
    /// Samples per ray evaluated per batch in the first pass.
    pub chunk: usize,
}

impl<T: Scalar> Default for RenderOptions<T> {
    fn default() -> Self {
        RenderOptions { prune_eps: T::of(1e-10), chunk: 16 }
    }
}

impl<T: Scalar> RenderOptions<T> {
    pub fn exact() -> Self {
        RenderOptions { prune_eps: T::zero(), chunk: 16 }
    }
}

struct RayState<T> {
    mu: Vec<T>,
    delta: Vec<T>,
    /// SDF values of evaluated samples (a prefix of `mu`).
    f: Vec<T>,
    sigma: Vec<T>,
    rgb: Vec<[T; 3]>,
    /// batch index into the second-pass SDF tape, per evaluated sample
    sdf_slot: Vec<Option<usize>>,
    color_slot: Vec<Option<usize>>,
    composite: Composite<T>,
}

/// Everything needed to backpropagate through one batch of rendered rays.
pub struct RenderTape<T: Scalar, F: RenderField<T>> {
    rays: Vec<RayState<T>>,
    sdf_tape: F::SdfTape,
    color_tape: Option<F::ColorTape>,
    dp: DensityParams<T>,
}

impl<T: Scalar, F: RenderField<T>> RenderTape<T, F> {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn opacity(&self) -> Vec<T> {
        self.rays.iter().map(|r| r.composite.opacity).collect()
    }

    pub fn depth(&self) -> Vec<T> {
        self.rays.iter().map(|r| r.composite.depth).collect()
    }

    pub fn rgb(&self) -> Vec<[T; 3]> {
        self.rays.iter().map(|r| r.composite.rgb).collect()
    }

    /// Full-length per-sample weights of every ray (zero past termination).
    pub fn weights(&self) -> Vec<Vec<T>> {
        self.rays
            .iter()
            .map(|r| {
                let mut w = r.composite.weights.clone();
                w.resize(r.mu.len(), T::zero());
                w
            })
            .collect()
    }

    /// Number of samples that were evaluated with retained intermediates.
    pub fn taped_samples(&self) -> usize {
        self.rays.iter().map(|r| r.sdf_slot.iter().flatten().count()).sum()
    }
}

/// Renders rays through `field`. Colors are computed only when `with_color`.
pub fn render_rays<T: Scalar, F: RenderField<T>, R: Rng>(
    field: &F,
    dp: &DensityParams<T>,
    rays: &[Ray<T>],
    sampling: &SamplingConfig<T>,
    rng: &mut R,
    with_color: bool,
    opts: &RenderOptions<T>,
) -> Result<RenderTape<T, F>> {
    sampling.validate()?;
    let eps = opts.prune_eps;
    let chunk = opts.chunk.max(1);
    let n = sampling.samples;

    let mut states: Vec<RayState<T>> = rays
        .iter()
        .map(|_| {
            let mu = sample_distances(sampling, rng);
            let delta = segment_lengths(&mu);
            RayState {
                mu,
                delta,
                f: Vec::with_capacity(n),
                sigma: Vec::new(),
                rgb: Vec::new(),
                sdf_slot: Vec::new(),
                color_slot: Vec::new(),
                composite: Composite { rgb: [T::zero(); 3], opacity: T::zero(), depth: T::zero(), weights: Vec::new() },
            }
        })
        .collect();

    // pass 1: SDF only, with early termination
    let mut log_t = vec![T::zero(); rays.len()];
    let mut active: Vec<usize> = (0..rays.len()).collect();
    let mut points = Vec::new();
    while !active.is_empty() {
        points.clear();
        for &r in &active {
            let st = &states[r];
            let start = st.f.len();
            for s in start..(start + chunk).min(n) {
                points.push(rays[r].at(st.mu[s]));
            }
        }
        let values = field.sdf(&points);
        let mut cursor = 0;
        active.retain(|&r| {
            let st = &mut states[r];
            let start = st.f.len();
            let end = (start + chunk).min(n);
            for s in start..end {
                let f = values[cursor];
                cursor += 1;
                st.f.push(f);
                log_t[r] += density_from_sdf(f, dp) * st.delta[s];
            }
            end < n && (-log_t[r]).exp() >= eps
        });
    }

    // select samples worth taping
    let mut sdf_points = Vec::new();
    let mut color_points = Vec::new();
    for (r, st) in states.iter_mut().enumerate() {
        let m = st.f.len();
        st.sdf_slot = vec![None; m];
        st.color_slot = vec![None; m];
        let mut acc = T::zero();
        for s in 0..m {
            let trans = (-acc).exp();
            let sigma = density_from_sdf(st.f[s], dp);
            let tau = sigma * st.delta[s];
            let w = trans * -(-tau).exp_m1();
            let grad_bound = trans * st.delta[s] * density_derivative(st.f[s], dp).abs();
            if grad_bound > eps || w > eps {
                st.sdf_slot[s] = Some(sdf_points.len());
                sdf_points.push(rays[r].at(st.mu[s]));
            }
            if with_color && w > eps {
                st.color_slot[s] = Some(color_points.len());
                color_points.push(rays[r].at(st.mu[s]));
            }
            acc += tau;
        }
    }

    // pass 2: taped evaluation of the selected samples
    let (sdf_taped, sdf_tape) = field.sdf_with_tape(&sdf_points);
    let (colors, color_tape) = if with_color {
        let (c, t) = field.colors_with_tape(&color_points);
        (c, Some(t))
    } else {
        (Vec::new(), None)
    };

    for st in &mut states {
        let m = st.f.len();
        for s in 0..m {
            if let Some(k) = st.sdf_slot[s] {
                st.f[s] = sdf_taped[k];
            }
        }
        st.sigma = st.f.iter().map(|f| density_from_sdf(*f, dp)).collect();
        st.rgb = st.color_slot.iter().map(|slot| slot.map_or([T::zero(); 3], |k| colors[k])).collect();
        st.composite = composite_unchecked(&st.sigma, &st.rgb, &st.mu[..m], &st.delta[..m]);
    }

    Ok(RenderTape { rays: states, sdf_tape, color_tape, dp: *dp })
}

/// Backpropagates per-ray output gradients into field parameter gradients.
///
/// `d_rgb` may be empty when the tape was rendered without color.
pub fn render_backward<T: Scalar>(
    params: &FieldParams<T>,
    tape: &RenderTape<T, FieldParams<T>>,
    d_rgb: &[[T; 3]],
    d_opacity: &[T],
    d_depth: &[T],
    grads: &mut FieldParams<T>,
) -> Result<()> {
    let n = tape.rays.len();
    if d_opacity.len() != n || d_depth.len() != n || !(d_rgb.is_empty() || d_rgb.len() == n) {
        return Err(invalid("one output gradient per rendered ray required"));
    }
    let mut df = vec![T::zero(); tape.sdf_tape.len()];
    let color_rows = tape.color_tape.as_ref().map_or(0, |c| c.values().len() / 3);
    let mut dc = vec![T::zero(); color_rows * 3];
    for (r, st) in tape.rays.iter().enumerate() {
        let m = st.f.len();
        let g_rgb = d_rgb.get(r).copied().unwrap_or([T::zero(); 3]);
        let (d_sigma, d_color) = composite_backward_with(
            &st.sigma,
            &st.rgb,
            &st.mu[..m],
            &st.delta[..m],
            &st.composite,
            g_rgb,
            d_opacity[r],
            d_depth[r],
        );
        for s in 0..m {
            if let Some(k) = st.sdf_slot[s] {
                df[k] += d_sigma[s] * density_derivative(st.f[s], &tape.dp);
            }
            if let Some(k) = st.color_slot[s] {
                for c in 0..3 {
                    dc[3 * k + c] += d_color[s][c];
                }
            }
        }
    }
    if !df.is_empty() {
        sdf_backward(params, &tape.sdf_tape, &df, grads)?;
    }
    if let Some(ct) = &tape.color_tape {
        if color_rows > 0 {
            color_backward(params, ct, &dc, grads)?;
        }
    }
    Ok(())
}

/// Rendered image: composited color over the background, opacity and depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    pub background: [T; 3],
    /// Row-major, background already composited.
    pub rgb: Vec<[T; 3]>,
    pub opacity: Vec<T>,
    pub depth: Vec<T>,
    pub weights: Vec<Vec<T>>,
}

impl<T: Scalar> RenderOutput<T> {
    /// Row-major `H x W x 3` buffer.
    pub fn rgb_flat(&self) -> Vec<T> {
        self.rgb.iter().flatten().copied().collect()
    }
}

/// Pixel-center rays of a pinhole camera, row-major.
pub fn camera_rays<T: Scalar>(intr: &CameraIntrinsics<T>, pose: &CameraPose<T>) -> Result<Vec<Ray<T>>> {
    intr.validate()?;
    let half = T::of(0.5);
    let mut rays = Vec::with_capacity(intr.width * intr.height);
    for v in 0..intr.height {
        for u in 0..intr.width {
            rays.push(backproject(intr, pose, (T::of(u as f64) + half, T::of(v as f64) + half))?);
        }
    }
    Ok(rays)
}

/// Renders a ray grid and composites the background.
#[allow(clippy::too_many_arguments)]
pub fn render_ray_image<T: Scalar, F: RenderField<T>>(
    field: &F,
    dp: &DensityParams<T>,
    rays: &[Ray<T>],
    width: usize,
    height: usize,
    background: [T; 3],
    sampling: &SamplingConfig<T>,
    seed: u64,
    opts: &RenderOptions<T>,
) -> Result<(RenderOutput<T>, RenderTape<T, F>)> {
    if rays.len() != width * height || rays.is_empty() {
        return Err(invalid("ray grid size does not match image size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = render_rays(field, dp, rays, sampling, &mut rng, true, opts)?;
    let rgb = tape
        .rays
        .iter()
        .map(|r| {
            let c = &r.composite;
            let bg_w = T::one() - c.opacity;
            [
                c.rgb[0] + bg_w * background[0],
                c.rgb[1] + bg_w * background[1],
                c.rgb[2] + bg_w * background[2],
            ]
        })
        .collect();
    let out = RenderOutput {
        width,
        height,
        background,
        rgb,
        opacity: tape.opacity(),
        depth: tape.depth(),
        weights: tape.weights(),
    };
    Ok((out, tape))
}

/// Renders a pinhole view at `resolution`, keeping the camera's field of view.
#[allow(clippy::too_many_arguments)]
pub fn render_view<T: Scalar, F: RenderField<T>>(
    field: &F,
    dp: &DensityParams<T>,
    camera: &CameraPose<T>,
    intrinsics: &CameraIntrinsics<T>,
    resolution: (usize, usize),
    background: [T; 3],
    sampling: &SamplingConfig<T>,
    seed: u64,
) -> Result<RenderOutput<T>> {
    render_view_taped(field, dp, camera, intrinsics, resolution, background, sampling, seed, &RenderOptions::default())
        .map(|(o, _)| o)
}

#[allow(clippy::too_many_arguments)]
pub fn render_view_taped<T: Scalar, F: RenderField<T>>(
    field: &F,
    dp: &DensityParams<T>,
    camera: &CameraPose<T>,
    intrinsics: &CameraIntrinsics<T>,
    resolution: (usize, usize),
    background: [T; 3],
    sampling: &SamplingConfig<T>,
    seed: u64,
    opts: &RenderOptions<T>,
) -> Result<(RenderOutput<T>, RenderTape<T, F>)> {
    let (w, h) = resolution;
    if w == 0 || h == 0 {
        return Err(invalid("resolution must be at least 1x1"));
    }
    let intr = intrinsics.scaled_to(w, h)?;
    let rays = camera_rays(&intr, camera)?;
    render_ray_image(field, dp, &rays, w, h, background, sampling, seed, opts)
}

/// Gradient of a loss on the background-composited image, mapped to the
/// per-ray inputs of [`render_backward`].
pub fn image_gradients<T: Scalar>(d_image: &[[T; 3]], background: [T; 3]) -> (Vec<[T; 3]>, Vec<T>) {
    let d_opacity = d_image
        .iter()
        .map(|g| -(g[0] * background[0] + g[1] * background[1] + g[2] * background[2]))
        .collect();
    (d_image.to_vec(), d_opacity)
}

/// Opacity and normalized expected depth along sensor rays.
pub fn render_sensor<T: Scalar, F: RenderField<T>>(
    field: &F,
    dp: &DensityParams<T>,
    rays: &[Ray<T>],
    sampling: &SamplingConfig<T>,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if rays.is_empty() {
        return Err(invalid("no rays to render"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = render_rays(field, dp, rays, sampling, &mut rng, false, &RenderOptions::default())?;
    Ok((tape.opacity(), tape.depth()))
}

//! Objective terms and their weighted assembly.
//!
//! Each term is available as a pure function of the quantities it reads
//! (values, opacities, gradient norms), returning the value and its
//! derivative with respect to those quantities. The `*_objective` helpers
//! run the field evaluations and push the weighted derivatives into a
//! parameter-gradient buffer.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{sdf_backward, sdf_forward, sdf_spatial, sdf_spatial_backward, sdf_values, DensityParams, FieldParams};
use crate::geometry::{Plane, Ray};
use crate::linalg::{Aabb, Vec3};
use crate::renderer::{render_backward, render_rays, RenderOptions, SamplingConfig};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct LossWeights<T> {
    pub mask: T,
    pub depth: T,
    pub point: T,
    pub eikonal: T,
    pub plane: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            mask: T::of(1e5),
            depth: T::of(1e5),
            point: T::of(1e5),
            eikonal: T::of(1e4),
            plane: T::of(1e5),
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if [self.mask, self.depth, self.point, self.eikonal, self.plane]
            .iter()
            .any(|w| !(*w >= T::zero()) || !w.is_finite())
        {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn zero() -> Self {
        LossWeights { mask: T::zero(), depth: T::zero(), point: T::zero(), eikonal: T::zero(), plane: T::zero() }
    }

    pub fn scaled(&self, s: T) -> Self {
        LossWeights {
            mask: self.mask * s,
            depth: self.depth * s,
            point: self.point * s,
            eikonal: self.eikonal * s,
            plane: self.plane * s,
        }
    }
}

/// Unweighted values of the five scalar terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents<T> {
    pub point: T,
    pub mask: T,
    pub depth: T,
    pub eikonal: T,
    pub plane: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub point: T,
    pub mask: T,
    pub depth: T,
    pub eikonal: T,
    pub plane: T,
    pub total: T,
}

pub fn total_loss<T: Scalar>(c: &LossComponents<T>, w: &LossWeights<T>) -> LossBreakdown<T> {
    LossBreakdown {
        point: c.point,
        mask: c.mask,
        depth: c.depth,
        eikonal: c.eikonal,
        plane: c.plane,
        total: w.mask * c.mask + w.depth * c.depth + w.point * c.point + w.eikonal * c.eikonal + w.plane * c.plane,
    }
}

/// A loss value with its derivative per input element.
#[derive(Clone, Debug, PartialEq)]
pub struct Term<T> {
    pub value: T,
    pub grad: Vec<T>,
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean absolute SDF value at the input points.
pub fn point_loss_term<T: Scalar>(values: &[T]) -> Result<Term<T>> {
    if values.is_empty() {
        return Err(invalid("point loss needs at least one point"));
    }
    let n = T::of(values.len() as f64);
    Ok(Term {
        value: values.iter().map(|f| f.abs()).sum::<T>() / n,
        grad: values.iter().map(|f| sign(*f) / n).collect(),
    })
}

pub fn point_loss<T: Scalar>(params: &FieldParams<T>, points: &[Vec3<T>]) -> Result<T> {
    Ok(point_loss_term(&sdf_values(params, points))?.value)
}

/// Mean absolute mask error; derivative is with respect to `rendered`.
pub fn mask_loss<T: Scalar>(mask: &[T], rendered: &[T]) -> Result<Term<T>> {
    if mask.len() != rendered.len() || mask.is_empty() {
        return Err(invalid(format!(
            "mask loss needs equal non-empty inputs, got {} and {}",
            mask.len(),
            rendered.len()
        )));
    }
    let k = T::of(mask.len() as f64);
    Ok(Term {
        value: mask.iter().zip(rendered).map(|(m, r)| (*m - *r).abs()).sum::<T>() / k,
        grad: mask.iter().zip(rendered).map(|(m, r)| sign(*r - *m) / k).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthTerm<T> {
    pub term: Term<T>,
    /// No observed ray was present; the value is zero.
    pub no_observed: bool,
}

/// Mean squared depth error over rays with `mask = 1`.
pub fn depth_loss<T: Scalar>(depth: &[T], rendered: &[T], mask: &[T]) -> Result<DepthTerm<T>> {
    if depth.len() != rendered.len() || depth.len() != mask.len() {
        return Err(invalid("depth loss inputs must have equal length"));
    }
    let observed = mask.iter().filter(|m| **m > T::of(0.5)).count();
    if observed == 0 {
        return Ok(DepthTerm {
            term: Term { value: T::zero(), grad: vec![T::zero(); depth.len()] },
            no_observed: true,
        });
    }
    let n = T::of(observed as f64);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); depth.len()];
    for i in 0..depth.len() {
        if mask[i] > T::of(0.5) {
            let e = rendered[i] - depth[i];
            value += e * e;
            grad[i] = T::of(2.0) * e / n;
        }
    }
    Ok(DepthTerm { term: Term { value: value / n, grad }, no_observed: false })
}

/// Mean `| |g| - 1 |`; derivative is with respect to each gradient vector.
pub fn eikonal_loss<T: Scalar>(gradients: &[Vec3<T>]) -> Result<(T, Vec<Vec3<T>>)> {
    if gradients.is_empty() {
        return Err(invalid("eikonal loss needs at least one point"));
    }
    let n = T::of(gradients.len() as f64);
    let mut value = T::zero();
    let grad = gradients
        .iter()
        .map(|g| {
            let norm = g.norm();
            value += (norm - T::one()).abs();
            if norm > T::zero() {
                *g * (sign(norm - T::one()) / (norm * n))
            } else {
                Vec3::zero()
            }
        })
        .collect();
    Ok((value / n, grad))
}

/// Mean `| norm - 1 |` of precomputed gradient norms.
pub fn eikonal_loss_from_norms<T: Scalar>(norms: &[T]) -> Result<T> {
    if norms.is_empty() {
        return Err(invalid("eikonal loss needs at least one point"));
    }
    Ok(norms.iter().map(|v| (*v - T::one()).abs()).sum::<T>() / T::of(norms.len() as f64))
}

/// Hinge on negative SDF values below the ground; a sum, not a mean.
pub fn plane_loss_term<T: Scalar>(values: &[T]) -> Term<T> {
    Term {
        value: values.iter().map(|f| (-*f).max(T::zero())).sum(),
        grad: values.iter().map(|f| if *f < T::zero() { -T::one() } else { T::zero() }).collect(),
    }
}

pub fn plane_loss<T: Scalar>(params: &FieldParams<T>, below_plane: &[Vec3<T>]) -> T {
    plane_loss_term(&sdf_values(params, below_plane)).value
}

/// Fresh uniform samples for the eikonal and plane terms.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxSamples<T> {
    pub uniform: Vec<Vec3<T>>,
    pub below_plane: Vec<Vec3<T>>,
    /// The region holds no volume below the plane.
    pub plane_empty: bool,
}

/// Region of interest used when none is given.
pub fn default_region<T: Scalar>() -> Aabb<T> {
    Aabb::cube(T::of(0.7))
}

pub fn sample_aux_points<T: Scalar>(plane: &Plane<T>, region: &Aabb<T>, n: usize, seed: u64) -> Result<AuxSamples<T>> {
    if region.is_degenerate() {
        return Err(invalid("sampling region is degenerate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut p = Vec3::zero();
        for i in 0..3 {
            let u = T::of(rng.random::<f64>());
            p.0[i] = region.min.0[i] + u * (region.max.0[i] - region.min.0[i]);
        }
        p
    };
    let uniform: Vec<Vec3<T>> = (0..n).map(|_| draw(&mut rng)).collect();
    let plane_empty = region.corners().iter().all(|c| plane.signed_distance(c) >= T::zero());
    let mut below_plane = Vec::with_capacity(n);
    if plane_empty {
        warn!("region of interest lies entirely above the ground plane; plane loss disabled");
    } else {
        let max_attempts = n.saturating_mul(10_000).max(10_000);
        let mut attempts = 0;
        while below_plane.len() < n && attempts < max_attempts {
            let p = draw(&mut rng);
            if plane.signed_distance(&p) < T::zero() {
                below_plane.push(p);
            }
            attempts += 1;
        }
    }
    Ok(AuxSamples { uniform, below_plane, plane_empty })
}

/// Values of the point, eikonal and plane terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeometryTerms<T> {
    pub point: T,
    pub eikonal: T,
    pub plane: T,
}

/// Evaluates `L_p` on `points`, the eikonal term on `points ∪ uniform`, and
/// the plane term on `below_plane`, accumulating the weighted parameter
/// gradient into `grads`. One SDF forward pass serves all three.
pub fn geometry_objective<T: Scalar>(
    params: &FieldParams<T>,
    points: &[Vec3<T>],
    uniform: &[Vec3<T>],
    below_plane: &[Vec3<T>],
    weights: &LossWeights<T>,
    grads: &mut FieldParams<T>,
) -> Result<GeometryTerms<T>> {
    if points.is_empty() {
        return Err(invalid("geometry objective needs input points"));
    }
    let (np, nu) = (points.len(), uniform.len());
    let batch: Vec<Vec3<T>> = points.iter().chain(uniform).chain(below_plane).copied().collect();
    let fwd = sdf_forward(params, &batch);
    let values = fwd.values();

    let lp = point_loss_term(&values[..np])?;
    let lplane = plane_loss_term(&values[np + nu..]);
    let mut df = vec![T::zero(); batch.len()];
    for (d, g) in df.iter_mut().zip(&lp.grad) {
        *d = weights.point * *g;
    }
    for (d, g) in df[np + nu..].iter_mut().zip(&lplane.grad) {
        *d = weights.plane * *g;
    }
    sdf_backward(params, &fwd, &df, grads)?;

    let spatial = sdf_spatial(params, &fwd);
    let (leik, d_grad) = eikonal_loss(&spatial.gradients[..np + nu])?;
    if weights.eikonal > T::zero() {
        let mut adj: Vec<Vec3<T>> = d_grad.into_iter().map(|g| g * weights.eikonal).collect();
        adj.resize(batch.len(), Vec3::zero());
        sdf_spatial_backward(params, &fwd, &spatial, &adj, grads)?;
    }
    Ok(GeometryTerms { point: lp.value, eikonal: leik, plane: lplane.value })
}

/// Sensor-ray mask and depth terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SensorTerms<T> {
    pub mask: T,
    pub depth: T,
    pub no_observed: bool,
}

/// Renders `rays` (opacity and depth only), evaluates the mask and depth
/// terms against the observation and accumulates their weighted gradient.
#[allow(clippy::too_many_arguments)]
pub fn sensor_objective<T: Scalar, R: Rng>(
    params: &FieldParams<T>,
    dp: &DensityParams<T>,
    rays: &[Ray<T>],
    mask: &[T],
    depth: &[T],
    sampling: &SamplingConfig<T>,
    rng: &mut R,
    opts: &RenderOptions<T>,
    weights: &LossWeights<T>,
    grads: &mut FieldParams<T>,
) -> Result<SensorTerms<T>> {
    if rays.len() != mask.len() || rays.len() != depth.len() {
        return Err(invalid("one mask and depth value per sensor ray required"));
    }
    let tape = render_rays(params, dp, rays, sampling, rng, false, opts)?;
    let opacity = tape.opacity();
    let rendered_depth = tape.depth();
    let lm = mask_loss(mask, &opacity)?;
    let ld = depth_loss(depth, &rendered_depth, mask)?;
    let d_op: Vec<T> = lm.grad.iter().map(|g| *g * weights.mask).collect();
    let d_depth: Vec<T> = ld.term.grad.iter().map(|g| *g * weights.depth).collect();
    render_backward(params, &tape, &[], &d_op, &d_depth, grads)?;
    Ok(SensorTerms { mask: lm.value, depth: ld.term.value, no_observed: ld.no_observed })
}

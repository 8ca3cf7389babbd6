//! Score distillation: noise schedule, image noising, the SDS gradient and
//! the guidance providers that supply it.
//!
//! Images here are `f64` in `[0, 1]`, row-major `H x W x 3`. Providers are
//! queried with the clean render plus the noise sample, because the remote
//! service computes the weighted gradient on its side; the in-process mock
//! does the same arithmetic locally.

mod mock;
mod remote;
pub mod wire;

pub use mock::{MockGuidance, ReferenceView};
pub use remote::{RemoteConfig, RemoteGuidance, ENDPOINT_ENV};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Linear-β diffusion schedule over `T` steps, indexed `1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    /// SDS weight `w(t) = 1 - ᾱ_t`.
    pub fn weight(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar(t)
    }

    /// Uniform integer timestep in `[0.02 T, 0.98 T]`.
    pub fn sample_timestep<R: Rng>(&self, rng: &mut R) -> usize {
        let n = self.steps() as f64;
        let lo = (0.02 * n).round().max(1.0) as usize;
        let hi = ((0.98 * n).round() as usize).clamp(lo, self.steps());
        rng.random_range(lo..=hi)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 8.5e-4, 1.2e-2).expect("default schedule is valid")
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut prod = 1.0;
    let alpha_bars = betas
        .iter()
        .map(|b| {
            prod *= 1.0 - b;
            prod
        })
        .collect();
    Ok(NoiseSchedule { betas, alpha_bars })
}

/// `I_t = √ᾱ_t I + √(1-ᾱ_t) ε`.
pub fn add_noise(image: &[f64], eps: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_timestep(t)?;
    add_noise_with(image, eps, schedule.alpha_bar(t))
}

/// Noising with an explicit `ᾱ`, for closed-form checks.
pub fn add_noise_with(image: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if image.len() != eps.len() {
        return Err(invalid(format!("image has {} values, noise {}", image.len(), eps.len())));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0).sqrt());
    Ok(image.iter().zip(eps).map(|(i, e)| a * i + b * e).collect())
}

/// Standard-normal noise, one value per pixel channel.
pub fn sample_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Camera direction of a guidance render, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceRequest {
    pub width: usize,
    pub height: usize,
    /// Rendered image `I_0`.
    pub image: Vec<f64>,
    pub prompt: String,
    pub view_suffix: String,
    pub t: usize,
    pub epsilon: Vec<f64>,
    pub guidance_scale: f64,
    /// Background the render was composited over.
    pub background: [f64; 3],
    /// Optional camera angles, used by view-keyed providers.
    pub view: Option<ViewAngles>,
}

impl GuidanceRequest {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        schedule.check_timestep(self.t)?;
        let n = self.width * self.height * 3;
        if n == 0 {
            return Err(invalid("guidance image is empty"));
        }
        if self.image.len() != n || self.epsilon.len() != n {
            return Err(invalid(format!(
                "expected {n} values for {}x{} image, got image {} and noise {}",
                self.width,
                self.height,
                self.image.len(),
                self.epsilon.len()
            )));
        }
        if self.image.iter().chain(&self.epsilon).any(|v| !v.is_finite()) {
            return Err(invalid("guidance image or noise is not finite"));
        }
        if !self.guidance_scale.is_finite() {
            return Err(invalid("guidance scale is not finite"));
        }
        Ok(())
    }

    /// Full text conditioning, e.g. `"a chair, front view"`.
    pub fn text(&self) -> String {
        if self.view_suffix.is_empty() {
            self.prompt.clone()
        } else {
            format!("{}, {}", self.prompt, self.view_suffix)
        }
    }
}

/// `w(t) (ε̂ - ε)` per pixel channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceGradient {
    pub width: usize,
    pub height: usize,
    pub grad: Vec<f64>,
    pub model_id: String,
}

/// Anything that can turn a guidance request into an SDS image gradient.
///
/// Implementations must be callable from several threads at once.
pub trait GuidanceProvider: Send + Sync {
    fn sds_grad(&self, request: &GuidanceRequest, schedule: &NoiseSchedule) -> Result<GuidanceGradient>;

    fn model_id(&self) -> String;
}

/// Validates the request, queries the provider and checks the returned
/// gradient's shape and finiteness.
pub fn sds_gradient(
    request: &GuidanceRequest,
    provider: &dyn GuidanceProvider,
    schedule: &NoiseSchedule,
) -> Result<GuidanceGradient> {
    request.validate(schedule)?;
    let g = provider.sds_grad(request, schedule)?;
    if g.width != request.width || g.height != request.height || g.grad.len() != request.image.len() {
        return Err(Error::Protocol(format!(
            "gradient shape {}x{} ({} values) does not match request {}x{}",
            g.width,
            g.height,
            g.grad.len(),
            request.width,
            request.height
        )));
    }
    if g.grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Protocol("gradient contains non-finite values".into()));
    }
    Ok(g)
}

/// `w(t) (ε̂ - ε)` given a noise prediction.
pub fn weighted_residual(eps_hat: &[f64], eps: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let w = schedule.weight(t);
    eps_hat.iter().zip(eps).map(|(h, e)| w * (h - e)).collect()
}

/// A provider whose noise prediction is the sampled noise itself, giving a
/// zero gradient.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoGuidance;

impl GuidanceProvider for EchoGuidance {
    fn sds_grad(&self, request: &GuidanceRequest, schedule: &NoiseSchedule) -> Result<GuidanceGradient> {
        Ok(GuidanceGradient {
            width: request.width,
            height: request.height,
            grad: weighted_residual(&request.epsilon, &request.epsilon, request.t, schedule),
            model_id: self.model_id(),
        })
    }

    fn model_id(&self) -> String {
        "echo-epsilon".into()
    }
}

//! Training configuration and its TOML file form.
//!
//! Keys mirror the [`TrainConfig`] field names; loss weights go in a
//! `[weights]` table. Missing keys take their defaults:
//!
//! ```toml
//! epochs = 2000
//! iterations_per_epoch = 100
//! learning_rate = 1e-4
//! dataset = "depth-camera"      # or "lidar"
//! prompt = "a chair"
//! gamma0_azimuth = 0.0
//! on_guidance_failure = "fail"  # or "sensor-only"
//!
//! [weights]
//! mask = 1e5
//! depth = 1e5
//! point = 1e5
//! eikonal = 1e4
//! plane = 1e5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetKind;
use crate::losses::LossWeights;

/// What to do when the guidance provider is unreachable mid-run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Abort training with the guidance error.
    #[default]
    Fail,
    /// Skip the guidance term for that iteration and keep going.
    SensorOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub learning_rate: f64,
    pub weights: LossWeights<f64>,
    pub samples_per_ray: usize,
    pub stratified: bool,
    /// Rays are sampled over `distance ± sampling_margin` around the object.
    pub sampling_margin: f64,
    pub render_width: usize,
    pub render_height: usize,
    /// Sensor pixels per iteration for depth-camera data; LiDAR uses all.
    pub pixel_batch: usize,
    /// Input points per iteration for the point term.
    pub point_batch: usize,
    pub aux_samples: usize,
    pub dataset: DatasetKind,
    /// Defaults to 0.5 for depth-camera data and 0.9 for LiDAR.
    pub sphere_radius: Option<f64>,
    pub prompt: String,
    pub gamma0_azimuth: f64,
    pub seed: u64,
    pub field_width: usize,
    pub encoding_levels: usize,
    pub density_alpha: f64,
    pub density_beta: f64,
    pub prune_eps: f64,
    pub guidance_scale: f64,
    /// Background behind score-distillation renders; a fresh random color
    /// every iteration when unset.
    pub sds_background: Option<[f64; 3]>,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    pub on_guidance_failure: FailurePolicy,
    pub mesh_resolution: usize,
    pub mesh_half_extent: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            iterations_per_epoch: 100,
            learning_rate: 1e-4,
            weights: LossWeights::default(),
            samples_per_ray: 64,
            stratified: true,
            sampling_margin: 1.0,
            render_width: 80,
            render_height: 80,
            pixel_batch: 2000,
            point_batch: 2000,
            aux_samples: 1000,
            dataset: DatasetKind::DepthCamera,
            sphere_radius: None,
            prompt: String::new(),
            gamma0_azimuth: 0.0,
            seed: 0,
            field_width: 96,
            encoding_levels: 6,
            density_alpha: 100.0,
            density_beta: 1e-3,
            prune_eps: 1e-10,
            guidance_scale: 100.0,
            sds_background: None,
            grad_clip: 10.0,
            checkpoint_every: 100,
            on_guidance_failure: FailurePolicy::Fail,
            mesh_resolution: 128,
            mesh_half_extent: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sphere_radius(&self) -> f64 {
        self.sphere_radius.unwrap_or(match self.dataset {
            DatasetKind::DepthCamera => 0.5,
            DatasetKind::Lidar => 0.9,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("render_width", self.render_width),
            ("render_height", self.render_height),
            ("pixel_batch", self.pixel_batch),
            ("point_batch", self.point_batch),
            ("aux_samples", self.aux_samples),
            ("field_width", self.field_width),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.samples_per_ray < 2 {
            return Err(Error::Config("samples_per_ray must be at least 2".into()));
        }
        if self.mesh_resolution < 2 {
            return Err(Error::Config("mesh_resolution must be at least 2".into()));
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("sampling_margin", self.sampling_margin),
            ("sphere_radius", self.sphere_radius()),
            ("density_alpha", self.density_alpha),
            ("density_beta", self.density_beta),
            ("grad_clip", self.grad_clip),
            ("mesh_half_extent", self.mesh_half_extent),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.prune_eps >= 0.0 && self.prune_eps < 1.0) {
            return Err(Error::Config("prune_eps must be in [0, 1)".into()));
        }
        if !self.gamma0_azimuth.is_finite() || !self.guidance_scale.is_finite() {
            return Err(Error::Config("gamma0_azimuth and guidance_scale must be finite".into()));
        }
        if let Some(bg) = self.sds_background {
            if bg.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config("sds_background channels must be in [0, 1]".into()));
            }
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

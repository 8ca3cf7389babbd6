//! The optimization loop: sensor and geometry losses, score distillation on
//! curriculum-sampled cameras, Adam, checkpoints and the loss log.

mod adam;
mod config;
mod curriculum;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use config::{FailurePolicy, TrainConfig};
pub use curriculum::{
    curriculum_sample, curriculum_sample_seeded, view_suffix, view_text, wrap_degrees, CameraSample, CurriculumState,
    AZIMUTH_SCHEDULE, CURRICULUM_START, VIEW_SUFFIXES,
};

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::evalx::{marching_cubes, TriangleMesh};
use crate::fields::{sdf_values, sphere_init, write_checkpoint, DensityParams, EncodingConfig, FieldConfig, FieldParams};
use crate::geometry::{camera_update, elevation_of, update_rotation, CameraIntrinsics, CameraPose, Plane, Ray};
use crate::guidance::{sample_noise, sds_gradient, GuidanceProvider, GuidanceRequest, NoiseSchedule, ViewAngles};
use crate::ingest::{DatasetKind, SensorModel, SensorObservation, LIDAR_ROWS};
use crate::linalg::{Aabb, Vec3};
use crate::losses::{
    default_region, geometry_objective, sample_aux_points, sensor_objective, total_loss, LossComponents, LossWeights,
};
use crate::renderer::{
    camera_rays, image_gradients, render_backward, render_ray_image, RenderField, RenderOptions, RenderOutput,
    SamplingConfig,
};
use crate::scalar::Scalar;

/// One row of the loss log.
///
/// CSV columns, in order: `iteration, epoch, mask, depth, point, eikonal,
/// plane, total, sds_grad_rms, timestep, azimuth, elevation,
/// distance_scale, guidance, grad_norm`. Loss terms are unweighted; `total`
/// is their weighted sum (the score-distillation term has no scalar value).
/// `guidance` is `ok`, `off` or `unavailable`; `timestep` is 0 when no
/// guidance gradient was applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub mask: f64,
    pub depth: f64,
    pub point: f64,
    pub eikonal: f64,
    pub plane: f64,
    pub total: f64,
    pub sds_grad_rms: f64,
    pub timestep: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub distance_scale: f64,
    pub guidance: &'static str,
    pub grad_norm: f64,
}

/// Ray layout used for score-distillation renders.
#[derive(Clone, Debug)]
enum SdsView<T> {
    /// Sensor intrinsics rescaled to the render resolution.
    Pinhole(CameraIntrinsics<T>),
    /// LiDAR crop rays, row-major, rotated about the object center.
    Lidar { rays: Vec<Ray<T>>, width: usize, height: usize },
}

fn lidar_grid<T: Scalar>(obs: &SensorObservation<T>, rows: usize) -> Result<(Vec<Ray<T>>, usize)> {
    let n = obs.rays.len();
    if n == 0 || n % rows != 0 {
        return Err(invalid("lidar rays do not form a full crop grid"));
    }
    // observation rays are stored column by column
    let width = n / rows;
    let mut rays = Vec::with_capacity(n);
    for row in 0..rows {
        for col in 0..width {
            rays.push(obs.rays[col * rows + row]);
        }
    }
    Ok((rays, width))
}

fn t_vec<T: Scalar>(p: &Vec3<f64>) -> Vec3<T> {
    Vec3::from_f64(p.0)
}

/// Training state for one observation. Owns the parameters exclusively.
pub struct Trainer<'g, T: Scalar> {
    config: TrainConfig,
    obs: SensorObservation<T>,
    plane: Plane<T>,
    xi0: f64,
    weights: LossWeights<T>,
    params: FieldParams<T>,
    adam: AdamState<T>,
    guidance: Option<&'g dyn GuidanceProvider>,
    schedule: NoiseSchedule,
    dp: DensityParams<T>,
    opts: RenderOptions<T>,
    sds_view: SdsView<T>,
    region: Aabb<T>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'g, T: Scalar> Trainer<'g, T> {
    /// `obs` must already be centered and scaled (see
    /// [`crate::ingest::centralize_and_scale`]) with its ground plane set.
    pub fn new(config: TrainConfig, obs: SensorObservation<T>, guidance: Option<&'g dyn GuidanceProvider>) -> Result<Self> {
        config.validate()?;
        if obs.kind != config.dataset {
            return Err(invalid(format!("observation is {:?} but config says {:?}", obs.kind, config.dataset)));
        }
        if obs.points.is_empty() || obs.rays.is_empty() {
            return Err(Error::EmptyObservation("nothing observed".into()));
        }
        let plane = obs.plane.oriented_toward(&obs.pose.center());
        let xi0 = elevation_of(&obs.pose, &plane).f64().max(0.0);
        let sds_view = match &obs.sensor {
            SensorModel::Pinhole(intr) => SdsView::Pinhole(intr.scaled_to(config.render_width, config.render_height)?),
            SensorModel::Lidar(_) => {
                let rows = LIDAR_ROWS;
                let (rays, width) = lidar_grid(&obs, rows)?;
                SdsView::Lidar { rays, width, height: rows }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let field_cfg = FieldConfig {
            encoding: EncodingConfig { levels: config.encoding_levels, include_input: true },
            width: config.field_width,
        };
        let params = sphere_init(&field_cfg, T::of(config.sphere_radius()), rng.next_u64());
        Ok(Trainer {
            weights: LossWeights {
                mask: T::of(config.weights.mask),
                depth: T::of(config.weights.depth),
                point: T::of(config.weights.point),
                eikonal: T::of(config.weights.eikonal),
                plane: T::of(config.weights.plane),
            },
            adam: AdamState::new(&params),
            dp: DensityParams::new(T::of(config.density_alpha), T::of(config.density_beta))?,
            opts: RenderOptions { prune_eps: T::of(config.prune_eps), chunk: RenderOptions::<T>::default().chunk },
            schedule: NoiseSchedule::default(),
            region: default_region(),
            config,
            obs,
            plane,
            xi0,
            params,
            guidance,
            sds_view,
            rng,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &FieldParams<T> {
        &self.params
    }

    pub fn observation(&self) -> &SensorObservation<T> {
        &self.obs
    }

    /// Replaces the parameters and resets the optimizer.
    pub fn set_params(&mut self, params: FieldParams<T>) -> Result<()> {
        if !params.same_shape(&self.params) {
            return Err(invalid("parameter shapes differ from the configured network"));
        }
        self.adam = AdamState::new(&params);
        self.params = params;
        Ok(())
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn epoch(&self) -> usize {
        self.iteration / self.config.iterations_per_epoch
    }

    /// Elevation of the sensor above the ground plane, degrees.
    pub fn sensor_elevation(&self) -> f64 {
        self.xi0
    }

    pub fn total_iterations(&self) -> usize {
        self.config.epochs * self.config.iterations_per_epoch
    }

    fn sampling_around(&self, distance: T) -> Result<SamplingConfig<T>> {
        let margin = T::of(self.config.sampling_margin);
        SamplingConfig::new(
            (distance - margin).max(T::zero()),
            distance + margin,
            self.config.samples_per_ray,
            self.config.stratified,
        )
    }

    /// Pinhole camera for a curriculum sample (depth-camera data only).
    pub fn sample_camera(&self, s: &CameraSample) -> Result<CameraPose<T>> {
        let pose = camera_update(&self.obs.pose, &self.plane, T::of(s.azimuth), T::of(s.elevation))?;
        Ok(pose.with_distance_scale(T::of(s.distance_scale)))
    }

    /// Rays, image size and object distance of a curriculum view.
    fn view_rays(&self, s: &CameraSample) -> Result<(Vec<Ray<T>>, usize, usize, T)> {
        let dist = self.obs.pose.center().norm() * T::of(s.distance_scale);
        match &self.sds_view {
            SdsView::Pinhole(intr) => {
                let pose = self.sample_camera(s)?;
                Ok((camera_rays(intr, &pose)?, intr.width, intr.height, dist))
            }
            SdsView::Lidar { rays, width, height } => {
                let r = update_rotation(&self.obs.pose, &self.plane, T::of(s.azimuth), T::of(s.elevation))?;
                let scale = T::of(s.distance_scale);
                Ok((rays.iter().map(|ray| ray.transformed(&r, scale)).collect(), *width, *height, dist))
            }
        }
    }

    /// Renders the score-distillation view for `s` over `background`.
    pub fn render_view(&self, s: &CameraSample, background: [f64; 3], seed: u64) -> Result<RenderOutput<T>> {
        self.render_field_view(&self.params, s, background, seed)
    }

    /// Renders any field through the same cameras, e.g. to make references.
    pub fn render_field_view<F: RenderField<T>>(
        &self,
        field: &F,
        s: &CameraSample,
        background: [f64; 3],
        seed: u64,
    ) -> Result<RenderOutput<T>> {
        let (rays, w, h, dist) = self.view_rays(s)?;
        let sampling = self.sampling_around(dist)?;
        let bg = background.map(T::of);
        Ok(render_ray_image(field, &self.dp, &rays, w, h, bg, &sampling, seed, &self.opts)?.0)
    }

    /// Angles of a curriculum view as seen by view-keyed providers.
    pub fn view_angles(&self, s: &CameraSample) -> ViewAngles {
        ViewAngles { azimuth: wrap_degrees(self.config.gamma0_azimuth + s.azimuth), elevation: self.xi0 + s.elevation }
    }

    fn sensor_step(&mut self, grads: &mut FieldParams<T>) -> Result<(T, T)> {
        let n = self.obs.rays.len();
        let chosen: Vec<usize> = if self.config.dataset == DatasetKind::DepthCamera && self.config.pixel_batch < n {
            index::sample(&mut self.rng, n, self.config.pixel_batch).into_vec()
        } else {
            (0..n).collect()
        };
        let rays: Vec<Ray<T>> = chosen.iter().map(|i| self.obs.rays[*i]).collect();
        let mask: Vec<T> = chosen.iter().map(|i| self.obs.mask[*i]).collect();
        let depth: Vec<T> = chosen.iter().map(|i| self.obs.depth[*i]).collect();
        let sampling = self.sampling_around(self.obs.pose.center().norm())?;
        let t = sensor_objective(
            &self.params,
            &self.dp,
            &rays,
            &mask,
            &depth,
            &sampling,
            &mut self.rng,
            &self.opts,
            &self.weights,
            grads,
        )?;
        Ok((t.mask, t.depth))
    }

    fn geometry_step(&mut self, grads: &mut FieldParams<T>) -> Result<(T, T, T)> {
        let n = self.obs.points.len();
        let points: Vec<Vec3<T>> = if self.config.point_batch < n {
            index::sample(&mut self.rng, n, self.config.point_batch).iter().map(|i| self.obs.points[i]).collect()
        } else {
            self.obs.points.clone()
        };
        let aux = sample_aux_points(&self.plane, &self.region, self.config.aux_samples, self.rng.next_u64())?;
        let t = geometry_objective(&self.params, &points, &aux.uniform, &aux.below_plane, &self.weights, grads)?;
        Ok((t.point, t.eikonal, t.plane))
    }

    /// Score-distillation gradient on a curriculum view, accumulated into
    /// `grads`. Returns the log fields it owns.
    fn sds_step(&mut self, grads: &mut FieldParams<T>, rec: &mut LogRecord) -> Result<()> {
        let Some(provider) = self.guidance else {
            rec.guidance = "off";
            return Ok(());
        };
        let state = CurriculumState::at(self.epoch(), self.xi0);
        let sample = curriculum_sample(&state, self.config.dataset, &mut self.rng);
        rec.azimuth = sample.azimuth;
        rec.elevation = sample.elevation;
        rec.distance_scale = sample.distance_scale;
        let background: [f64; 3] = match self.config.sds_background {
            Some(bg) => bg,
            None => [self.rng.random(), self.rng.random(), self.rng.random()],
        };
        let (rays, w, h, dist) = self.view_rays(&sample)?;
        let sampling = self.sampling_around(dist)?;
        let bg = background.map(T::of);
        let render_seed = self.rng.next_u64();
        let (out, tape) = render_ray_image(&self.params, &self.dp, &rays, w, h, bg, &sampling, render_seed, &self.opts)?;
        let t = self.schedule.sample_timestep(&mut self.rng);
        let epsilon = sample_noise(w * h * 3, &mut self.rng);
        let view = self.view_angles(&sample);
        let request = GuidanceRequest {
            width: w,
            height: h,
            image: out.rgb_flat().iter().map(|v| v.f64()).collect(),
            prompt: self.config.prompt.clone(),
            view_suffix: view_suffix(view.azimuth, view.elevation).to_string(),
            t,
            epsilon,
            guidance_scale: self.config.guidance_scale,
            background,
            view: Some(view),
        };
        let g = match sds_gradient(&request, provider, &self.schedule) {
            Ok(g) => g,
            Err(Error::GuidanceUnavailable(msg)) if self.config.on_guidance_failure == FailurePolicy::SensorOnly => {
                warn!("iteration {}: guidance unavailable ({msg}); sensor losses only", self.iteration);
                rec.guidance = "unavailable";
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let d_image: Vec<[T; 3]> = g.grad.chunks_exact(3).map(|c| [T::of(c[0]), T::of(c[1]), T::of(c[2])]).collect();
        let (d_rgb, d_opacity) = image_gradients(&d_image, bg);
        let zeros = vec![T::zero(); d_image.len()];
        render_backward(&self.params, &tape, &d_rgb, &d_opacity, &zeros, grads)?;
        rec.guidance = "ok";
        rec.timestep = t;
        rec.sds_grad_rms = (g.grad.iter().map(|v| v * v).sum::<f64>() / g.grad.len() as f64).sqrt();
        Ok(())
    }

    /// Runs one iteration and returns its log record.
    pub fn step(&mut self) -> Result<LogRecord> {
        let mut grads = self.params.zeros_like();
        let (mask, depth) = self.sensor_step(&mut grads)?;
        let (point, eikonal, plane) = self.geometry_step(&mut grads)?;
        let comps = LossComponents { point: point.f64(), mask: mask.f64(), depth: depth.f64(), eikonal: eikonal.f64(), plane: plane.f64() };
        let breakdown = total_loss(&comps, &self.config.weights);
        let mut rec = LogRecord {
            iteration: self.iteration,
            epoch: self.epoch(),
            mask: comps.mask,
            depth: comps.depth,
            point: comps.point,
            eikonal: comps.eikonal,
            plane: comps.plane,
            total: breakdown.total,
            sds_grad_rms: 0.0,
            timestep: 0,
            azimuth: 0.0,
            elevation: 0.0,
            distance_scale: 1.0,
            guidance: "off",
            grad_norm: 0.0,
        };
        self.sds_step(&mut grads, &mut rec)?;
        if !grads.is_finite() {
            return Err(invalid(format!("non-finite gradient at iteration {}", self.iteration)));
        }
        rec.grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip).f64();
        adam_step(&mut self.params, &grads, &mut self.adam, self.config.learning_rate)?;
        self.iteration += 1;
        Ok(rec)
    }

    /// Zero level set of the current SDF in the normalized frame.
    pub fn extract_mesh(&self) -> Result<TriangleMesh> {
        let h = self.config.mesh_half_extent;
        marching_cubes(
            |pts| {
                let q: Vec<Vec3<T>> = pts.iter().map(t_vec).collect();
                sdf_values(&self.params, &q).into_iter().map(|v| v.f64()).collect()
            },
            &Aabb::cube(h),
            self.config.mesh_resolution,
        )
    }
}

/// Result of [`train`]. `mesh` is in the normalized frame.
pub struct TrainOutput<T> {
    pub params: FieldParams<T>,
    pub mesh: TriangleMesh,
    pub log: Vec<LogRecord>,
}

/// File names written by [`train`] into its output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MESH_FILE: &str = "mesh.ply";
pub const LOG_FILE: &str = "loss_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn epoch_checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:05}.bin"))
}

fn save_checkpoint<T: Scalar>(params: &FieldParams<T>, path: &Path) -> Result<()> {
    write_checkpoint(params, BufWriter::new(fs::File::create(path)?))
}

/// Maps a normalized-frame mesh back to the observation's sensor frame.
pub fn mesh_to_sensor_frame<T: Scalar>(mesh: &TriangleMesh, obs: &SensorObservation<T>) -> TriangleMesh {
    mesh.map_vertices(|v| obs.normalization.invert(v))
}

/// Runs the whole schedule. With `out`, writes a checkpoint every
/// `checkpoint_every` epochs and at the end, the loss log as CSV, and the
/// final mesh in the sensor frame as binary PLY.
pub fn train<T: Scalar>(
    config: TrainConfig,
    obs: SensorObservation<T>,
    guidance: Option<&dyn GuidanceProvider>,
    out: Option<&Path>,
) -> Result<TrainOutput<T>> {
    let mut trainer = Trainer::new(config, obs, guidance)?;
    let cfg = trainer.config().clone();
    let mut csv_out = match out {
        Some(dir) => {
            fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
            let w = csv::Writer::from_path(dir.join(LOG_FILE)).map_err(|e| Error::Io(e.into()))?;
            Some(w)
        }
        None => None,
    };
    let mut log = Vec::with_capacity(trainer.total_iterations());
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.iterations_per_epoch {
            let rec = trainer.step()?;
            if let Some(w) = csv_out.as_mut() {
                w.serialize(&rec).map_err(|e| Error::Io(e.into()))?;
            }
            log.push(rec);
        }
        if let Some(last) = log.last() {
            info!("epoch {epoch}: total {:.6} point {:.3e} guidance {}", last.total, last.point, last.guidance);
        }
        if let Some(dir) = out {
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(trainer.params(), &epoch_checkpoint_path(dir, epoch + 1))?;
            }
        }
    }
    let mesh = trainer.extract_mesh()?;
    if let Some(dir) = out {
        if let Some(mut w) = csv_out {
            w.flush()?;
        }
        save_checkpoint(trainer.params(), &dir.join(CHECKPOINT_FILE))?;
        mesh_to_sensor_frame(&mesh, trainer.observation()).write_ply(&dir.join(MESH_FILE))?;
    }
    Ok(TrainOutput { params: trainer.params().clone(), mesh, log })
}

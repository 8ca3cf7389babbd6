use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};

use sdfill::geometry::{fit_plane_ransac, CameraPose, Plane};
use sdfill::guidance::{GuidanceProvider, MockGuidance, RemoteConfig, RemoteGuidance};
use sdfill::ingest::{
    centralize_and_scale, depth_points, depth_to_observation, lidar_observation, load_depth_png, load_mask_png,
    load_points, parse_intrinsics, parse_pose, DatasetKind, LidarFov, SensorObservation,
};
use sdfill::trainer::{train, TrainConfig};
use sdfill::Vec3d;

/// Inlier distance for the ground plane, in sensor units (metres).
const PLANE_THRESHOLD: f64 = 0.02;
const PLANE_ITERATIONS: usize = 1000;

#[derive(Args, Debug)]
pub struct CompleteArgs {
    /// Training config (TOML, keys as in the trainer config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Depth-camera data: scene cloud for the ground plane (optional, the
    /// unmasked depth pixels are used otherwise). LiDAR data: the object scan
    /// in the sensor frame.
    #[arg(long)]
    points: Option<PathBuf>,
    /// 16-bit z-depth PNG in millimetres (depth-camera data).
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Object mask PNG, nonzero = object (depth-camera data).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Intrinsics text file: `fx fy cx cy` then `width height`.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Camera-to-world pose, 3x4 or 4x4 text matrix (identity by default).
    #[arg(long)]
    pose: Option<PathBuf>,
    /// LiDAR data: ground points for the plane fit, sensor frame.
    #[arg(long)]
    ground: Option<PathBuf>,
    /// Object description, e.g. "a chair".
    #[arg(long)]
    prompt: String,
    /// `mock:<dir>`, `remote:<url>` or `none`.
    #[arg(long, default_value = "none")]
    guidance: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

enum Guidance {
    Off,
    Mock(MockGuidance),
    Remote(RemoteGuidance),
}

impl Guidance {
    fn parse(spec: &str) -> Result<Self> {
        if spec == "none" {
            return Ok(Guidance::Off);
        }
        if let Some(dir) = spec.strip_prefix("mock:") {
            let mock = MockGuidance::load_dir(Path::new(dir)).with_context(|| format!("loading mock references from {dir}"))?;
            return Ok(Guidance::Mock(mock));
        }
        if let Some(url) = spec.strip_prefix("remote:") {
            let cfg = RemoteConfig::new(url).with_env_override();
            info!("guidance endpoint {}", cfg.endpoint);
            return Ok(Guidance::Remote(RemoteGuidance::new(cfg)?));
        }
        bail!("--guidance must be mock:<dir>, remote:<url> or none, got {spec:?}")
    }

    fn provider(&self) -> Option<&dyn GuidanceProvider> {
        match self {
            Guidance::Off => None,
            Guidance::Mock(m) => Some(m),
            Guidance::Remote(r) => Some(r),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn ground_plane(scene: &[Vec3d], sensor: &CameraPose<f64>, seed: u64) -> Result<Plane<f64>> {
    let (plane, inliers) = fit_plane_ransac(scene, PLANE_THRESHOLD, PLANE_ITERATIONS, seed)?;
    info!("ground plane from {} of {} scene points", inliers.len(), scene.len());
    Ok(plane.oriented_toward(&sensor.center()))
}

fn depth_observation(args: &CompleteArgs, seed: u64) -> Result<SensorObservation<f64>> {
    let (Some(depth), Some(mask), Some(intr)) = (&args.depth, &args.mask, &args.intrinsics) else {
        bail!("depth-camera data needs --depth, --mask and --intrinsics");
    };
    let (w, h, depth_mm) = load_depth_png(depth)?;
    let (mw, mh, mask) = load_mask_png(mask)?;
    let intr = parse_intrinsics::<f64>(&read_text(intr)?, &intr.display().to_string())?;
    if (w, h) != (intr.width, intr.height) || (mw, mh) != (w, h) {
        bail!("depth {w}x{h}, mask {mw}x{mh} and intrinsics {}x{} must agree", intr.width, intr.height);
    }
    let pose = match &args.pose {
        Some(p) => parse_pose::<f64>(&read_text(p)?, &p.display().to_string())?,
        None => CameraPose::identity(),
    };
    let mut obs = depth_to_observation(&depth_mm, &mask, &intr, &pose)?;
    let scene = match &args.points {
        Some(p) => load_points::<f64>(p)?,
        None => {
            let background: Vec<u16> = depth_mm.iter().zip(&mask).map(|(d, m)| if *m { 0 } else { *d }).collect();
            depth_points(&background, &intr, &pose)
        }
    };
    obs.plane = ground_plane(&scene, &pose, seed)?;
    Ok(obs)
}

fn lidar_scan(args: &CompleteArgs, seed: u64) -> Result<SensorObservation<f64>> {
    let Some(points) = &args.points else {
        bail!("lidar data needs --points with the object scan");
    };
    let pts = load_points::<f64>(points)?;
    let mut obs = lidar_observation(&pts, LidarFov::default())?;
    match &args.ground {
        Some(g) => obs.plane = ground_plane(&load_points::<f64>(g)?, &obs.pose, seed)?,
        None => warn!("no --ground given; assuming a flat ground {} below the sensor", -obs.plane.offset),
    }
    Ok(obs)
}

pub fn run(args: CompleteArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.prompt = args.prompt.clone();
    config.validate()?;
    let guidance = Guidance::parse(&args.guidance)?;
    let raw = match config.dataset {
        DatasetKind::DepthCamera => depth_observation(&args, config.seed)?,
        DatasetKind::Lidar => lidar_scan(&args, config.seed)?,
    };
    let (norm, obs) = centralize_and_scale(&raw)?;
    info!("{} observed points, center {:?}, scale {:.4}", obs.points.len(), norm.center, norm.scale);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("config.toml"), config.to_toml_string())?;
    fs::write(args.out.join("normalization.json"), serde_json::to_string_pretty(&obs.normalization)?)?;
    let out = train(config, obs, guidance.provider(), Some(&args.out))?;
    let last = out.log.last().context("empty training log")?;
    info!(
        "done: {} iterations, final point loss {:.3e}, mesh with {} triangles in {}",
        out.log.len(),
        last.point,
        out.mesh.triangles.len(),
        args.out.display()
    );
    Ok(())
}

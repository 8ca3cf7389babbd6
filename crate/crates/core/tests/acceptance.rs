//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `SDFILL_ACCEPTANCE_ONLY=A1,A5` limits the run.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{chamfer_to_truth, hemisphere, sphere_references};
use sdfill::evalx::{chamfer_mm, chamfer_mm_brute_force, icp_align, RigidTransform};
use sdfill::fields::{
    density_from_sdf, sphere_init, DensityParams, EncodingConfig, FieldConfig, FieldParams,
};
use sdfill::geometry::{project, rodrigues_rotation, CameraIntrinsics, CameraPose, Ray};
use sdfill::guidance::{sds_gradient, GuidanceRequest, MockGuidance, NoiseSchedule, ReferenceView};
use sdfill::ingest::{centralization, depth_points, DatasetKind, BOX_CENTER_RATIO};
use sdfill::linalg::Vec3;
use sdfill::losses::{geometry_objective, sensor_objective, LossWeights};
use sdfill::renderer::{
    image_gradients, render_backward, render_ray_image, render_sensor, AnalyticSphere, RenderOptions, SamplingConfig,
};
use sdfill::synthetic::orbit_camera;
use sdfill::trainer::{
    curriculum_sample, mesh_to_sensor_frame, train, CurriculumState, TrainConfig, CHECKPOINT_FILE, MESH_FILE,
};

type Outcome = Result<String, String>;

fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3<f64> {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        if let Some(v) = random_vec(rng, 1.0).normalized() {
            return v;
        }
    }
}

// A1

fn small_field(rng: &mut ChaCha8Rng) -> FieldParams<f64> {
    let cfg = FieldConfig { encoding: EncodingConfig { levels: 1, include_input: true }, width: 8 };
    let mut p = sphere_init(&cfg, 0.3, rng.random());
    p.add_scaled(&FieldParams::random(&cfg, 1.0, rng.random()), 0.05);
    p
}

fn perturbed(p: &FieldParams<f64>, dir: &[f64], h: f64) -> FieldParams<f64> {
    let mut q = p.clone();
    let mut k = 0;
    for t in q.tensors_mut() {
        for v in t.iter_mut() {
            *v += h * dir[k];
            k += 1;
        }
    }
    q
}

/// Relative difference with the denominator floored at `1e-6`: central
/// differences of O(1) losses carry ~1e-10 of roundoff, which would swamp
/// the ratio for near-zero derivatives.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic directional derivatives of `loss` against central
/// differences along a random direction and along the four coordinates with
/// the largest gradient. Returns the worst relative error.
///
/// The SDF network is ReLU, so every loss is only piecewise smooth in the
/// parameters (and the eikonal term, which sees the piecewise-constant
/// spatial gradient, is piecewise continuous). A central difference whose
/// stencil straddles an activation flip is meaningless, so each direction is
/// differenced at several step sizes and the best agreement counts; a real
/// gradient error shows at every step size.
fn gradient_error(
    params: &FieldParams<f64>,
    grad: &FieldParams<f64>,
    rng: &mut ChaCha8Rng,
    steps: &[f64],
    loss: &dyn Fn(&FieldParams<f64>) -> f64,
) -> f64 {
    let n = params.parameter_count();
    let g = grad.to_flat();
    let mut dirs: Vec<Vec<f64>> = vec![(0..n).map(|_| rng.random_range(-1.0..1.0)).collect()];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()));
    for &i in order.iter().take(4) {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        dirs.push(e);
    }
    dirs.iter()
        .map(|d| {
            let analytic: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
            steps
                .iter()
                .map(|h| {
                    let numeric = (loss(&perturbed(params, d, *h)) - loss(&perturbed(params, d, -*h))) / (2.0 * h);
                    rel_err(analytic, numeric)
                })
                .fold(f64::INFINITY, f64::min)
        })

        .fold(0.0, f64::max)
}

const STEPS: [f64; 3] = [1e-6, 1e-7, 1e-8];

fn geometry_instance(rng: &mut ChaCha8Rng) -> Vec<(&'static str, f64)> {
    let params = small_field(rng);
    let points: Vec<_> = (0..12).map(|_| unit(rng) * rng.random_range(0.25..0.35)).collect();
    let uniform: Vec<_> = (0..12).map(|_| random_vec(rng, 1.0)).collect();
    let below: Vec<_> = (0..12).map(|_| random_vec(rng, 0.4)).collect();
    let only = |k: usize| {
        let mut w = LossWeights::zero();
        match k {
            0 => w.point = 1.0,
            1 => w.eikonal = 1.0,
            _ => w.plane = 1.0,
        }
        w
    };
    let mut out = Vec::new();
    for (k, name) in ["point", "eikonal", "plane"].into_iter().enumerate() {
        let w = only(k);
        let eval = |p: &FieldParams<f64>| {
            let t = geometry_objective(p, &points, &uniform, &below, &w, &mut p.zeros_like()).unwrap();
            [t.point, t.eikonal, t.plane][k]
        };
        let mut grad = params.zeros_like();
        geometry_objective(&params, &points, &uniform, &below, &w, &mut grad).unwrap();
        out.push((name, gradient_error(&params, &grad, rng, &STEPS, &eval)));
    }
    out
}

fn sensor_instance(rng: &mut ChaCha8Rng) -> Vec<(&'static str, f64)> {
    let params = small_field(rng);
    let dp = DensityParams::default();
    let opts = RenderOptions::exact();
    let sampling = SamplingConfig::around(1.5, 48, false).unwrap();
    let rays: Vec<Ray<f64>> = (0..6)
        .map(|_| {
            let origin = unit(rng) * 1.5;
            let aim = random_vec(rng, 0.25);
            Ray::new(origin, aim - origin).unwrap()
        })
        .collect();
    let mask: Vec<f64> = (0..6).map(|i| if i % 3 == 2 { 0.0 } else { 1.0 }).collect();
    let depth: Vec<f64> = (0..6).map(|_| rng.random_range(1.1..1.4)).collect();
    let mut out = Vec::new();
    for (k, name) in ["mask", "depth"].into_iter().enumerate() {
        let mut w = LossWeights::zero();
        if k == 0 {
            w.mask = 1.0;
        } else {
            w.depth = 1.0;
        }
        let eval = |p: &FieldParams<f64>| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let t = sensor_objective(p, &dp, &rays, &mask, &depth, &sampling, &mut r, &opts, &w, &mut p.zeros_like()).unwrap();
            if k == 0 {
                t.mask
            } else {
                t.depth
            }
        };
        let mut grad = params.zeros_like();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        sensor_objective(&params, &dp, &rays, &mask, &depth, &sampling, &mut r, &opts, &w, &mut grad).unwrap();
        out.push((name, gradient_error(&params, &grad, rng, &STEPS, &eval)));
    }
    out
}

fn sds_instance(rng: &mut ChaCha8Rng) -> f64 {
    let params = small_field(rng);
    let dp = DensityParams::default();
    let opts = RenderOptions::exact();
    let (w, h) = (4, 4);
    let pose = orbit_camera(Vec3::zero(), 1.5, rng.random_range(-180.0..180.0), rng.random_range(-30.0..30.0)).unwrap();
    let intr = CameraIntrinsics::from_fov(45.0, 4).unwrap();
    let rays = sdfill::renderer::camera_rays(&intr, &pose).unwrap();
    let sampling = SamplingConfig::around(1.5, 48, false).unwrap();
    let background = [rng.random(), rng.random(), rng.random()];
    let alpha: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
    let rgb: Vec<f64> = (0..w * h * 3).map(|i| alpha[i / 3] * rng.random::<f64>()).collect();
    let view = sdfill::guidance::ViewAngles { azimuth: 0.0, elevation: 0.0 };
    let mock = MockGuidance::new(vec![ReferenceView::new(view, w, h, rgb, alpha).unwrap()]).unwrap();
    let schedule = NoiseSchedule::default();
    let t = rng.random_range(20..=980);
    let epsilon: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (out, tape) = render_ray_image(&params, &dp, &rays, w, h, background, &sampling, 0, &opts).unwrap();
    let request = GuidanceRequest {
        width: w,
        height: h,
        image: out.rgb_flat(),
        prompt: "a ball".into(),
        view_suffix: "front view".into(),
        t,
        epsilon,
        guidance_scale: 100.0,
        background,
        view: None,
    };
    let g = sds_gradient(&request, &mock, &schedule).unwrap();
    let d_image: Vec<[f64; 3]> = g.grad.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let (d_rgb, d_op) = image_gradients(&d_image, background);
    let mut grad = params.zeros_like();
    render_backward(&params, &tape, &d_rgb, &d_op, &vec![0.0; w * h], &mut grad).unwrap();

    // The mock's gradient is that of 0.5 c |I - I*|^2.
    let target = mock.views()[0].target(w, h, background);
    let ab = schedule.alpha_bar(t);
    let c = schedule.weight(t) * ab.sqrt() / (1.0 - ab).sqrt();
    let eval = |p: &FieldParams<f64>| {
        let (o, _) = render_ray_image(p, &dp, &rays, w, h, background, &sampling, 0, &opts).unwrap();
        0.5 * c * o.rgb_flat().iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    gradient_error(&params, &grad, rng, &STEPS, &eval)
}

fn a1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let names = ["point", "eikonal", "plane", "mask", "depth"];
    let mut worst = [0.0f64; 5];
    let mut worst_sds = 0.0f64;
    for _ in 0..100 {
        let errs = geometry_instance(&mut rng).into_iter().chain(sensor_instance(&mut rng));
        for (name, e) in errs {
            let k = names.iter().position(|n| *n == name).unwrap();
            worst[k] = worst[k].max(e);
        }
        worst_sds = worst_sds.max(sds_instance(&mut rng));
    }
    let summary = names
        .iter()
        .zip(&worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .chain([format!("sds-render {worst_sds:.1e}")])
        .collect::<Vec<_>>()
        .join(", ");
    // Mask and depth pass through the renderer like the guidance term.
    let tolerance = [1e-4, 1e-4, 1e-4, 1e-3, 1e-3];
    if worst.iter().zip(tolerance).all(|(e, t)| *e <= t) && worst_sds <= 1e-3 {
        Ok(format!("worst relative error over 100 instances: {summary}"))
    } else {
        Err(format!("tolerance 1e-4 (1e-3 through the renderer) exceeded: {summary}"))
    }
}

// A2

fn a2() -> Outcome {
    let dp = DensityParams::new(100.0, 1e-3).unwrap();
    let sphere = AnalyticSphere::<f64>::new(Vec3::zero(), 0.3);
    let sigma0 = density_from_sdf(0.0, &dp);
    let sampling = SamplingConfig::around(1.5, 128, false).unwrap();
    let tol = 2.0 * (sampling.far - sampling.near) / 128.0;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let origin = Vec3::new(0.0, 0.0, -1.5);
    let center = Ray::new(origin, Vec3::new(0.0, 0.0, 1.0)).unwrap();
    let miss = Ray::new(origin, Vec3::new(0.5, 0.0, 1.0)).unwrap();
    let mut hits = vec![center];
    while hits.len() < 50 {
        let r = Ray::new(origin, Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 1.0)).unwrap();
        if sphere.intersect(&r).is_some() {
            hits.push(r);
        }
    }
    let rays: Vec<_> = hits.iter().copied().chain([miss]).collect();
    let (opacity, depth) = render_sensor(&sphere, &dp, &rays, &sampling, 0).map_err(|e| e.to_string())?;
    let m_center = opacity[0];
    let m_miss = *opacity.last().unwrap();
    let depth_err = hits
        .iter()
        .zip(&depth)
        .map(|(r, d)| (sphere.intersect(r).unwrap() - d).abs())
        .fold(0.0, f64::max);
    let msg = format!(
        "sigma(0) = {sigma0}, center opacity {m_center:.6}, miss opacity {m_miss:.2e}, max depth error {depth_err:.2e} (bound {tol:.4})"
    );
    if sigma0 == 50.0 && m_center > 0.99 && m_miss < 0.01 && depth_err <= tol {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// A3

fn a3() -> Outcome {
    let xi0 = 30.0;
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut report = Vec::new();
    for kind in [DatasetKind::DepthCamera, DatasetKind::Lidar] {
        for epoch in [0, 19, 20, 50, 80, 100, 120, 1999] {
            let st = CurriculumState::at(epoch, xi0);
            let expected_nu = match epoch {
                0..=19 => 0.0,
                20..=49 => 30.0,
                50..=79 => 45.0,
                80..=99 => 60.0,
                100..=119 => 90.0,
                _ => 180.0,
            };
            let el = match (epoch >= 20, kind) {
                (false, _) => (0.0, 0.0),
                (true, DatasetKind::DepthCamera) => (-xi0, 0.0),
                (true, DatasetKind::Lidar) => (-xi0, xi0),
            };
            let dist = if epoch >= 20 && kind == DatasetKind::Lidar { (1.0, 2.0) } else { (1.0, 1.0) };
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for _ in 0..draws {
                let s = curriculum_sample(&st, kind, &mut rng);
                for (k, v) in [s.azimuth, s.elevation, s.distance_scale].into_iter().enumerate() {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
            let intervals = [(-expected_nu, expected_nu), el, dist];
            for (k, (a, b)) in intervals.into_iter().enumerate() {
                let inside = lo[k] >= a && hi[k] <= b;
                let coverage = if b > a { (hi[k] - lo[k]) / (b - a) } else { f64::from(u8::from(lo[k] == a && hi[k] == b)) };
                if !inside || coverage <= 0.95 {
                    report.push(format!(
                        "{kind:?} epoch {epoch} {}: [{:.3}, {:.3}] vs [{a}, {b}]",
                        ["azimuth", "elevation", "distance"][k],
                        lo[k],
                        hi[k]
                    ));
                }
            }
        }
    }
    if report.is_empty() {
        Ok(format!("16 schedules x {draws} draws inside their intervals with >95% coverage"))
    } else {
        Err(report.join("; "))
    }
}

// A4 / A6

const A4_SEED: u64 = 2024;

/// The mock's gradient is about 1e3 times weaker than the sensor terms at
/// their usual weights (RMS ~0.05 per pixel on a 32x32 render), so without
/// rescaling the reference views barely move the unseen half. Dividing every
/// weight by 1e3 restores a comparable balance; Adam makes this the same as
/// scaling the guidance up.
fn a4_weights() -> LossWeights<f64> {
    let w = LossWeights::<f64>::default();
    let k = 1e-3;
    LossWeights { mask: w.mask * k, depth: w.depth * k, point: w.point * k, eikonal: w.eikonal * k, plane: w.plane * k }
}

fn a4_config() -> TrainConfig {
    TrainConfig {
        weights: a4_weights(),
        epochs: 200,
        iterations_per_epoch: 10,
        render_width: 32,
        render_height: 32,
        samples_per_ray: 64,
        pixel_batch: 500,
        aux_samples: 500,
        mesh_resolution: 96,
        prompt: "a ball".into(),
        seed: A4_SEED,
        ..TrainConfig::default()
    }
}

struct A4Run {
    chamfer: f64,
    checkpoint: Vec<u8>,
    mesh: Vec<u8>,
    seconds: f64,
}

fn a4_run(guided: bool) -> Result<A4Run, String> {
    let fx = hemisphere(64);
    let cfg = a4_config();
    let mock = sphere_references(&fx, &cfg);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let guidance = guided.then_some(&mock as &dyn sdfill::guidance::GuidanceProvider);
    let out = train(cfg, fx.obs.clone(), guidance, Some(dir.path())).map_err(|e| e.to_string())?;
    let seconds = t0.elapsed().as_secs_f64();
    let mesh = mesh_to_sensor_frame(&out.mesh, &fx.obs);
    if mesh.is_empty() {
        return Err("empty mesh".into());
    }
    Ok(A4Run {
        chamfer: chamfer_to_truth(&mesh, &fx.truth, 20_000),
        checkpoint: fs::read(dir.path().join(CHECKPOINT_FILE)).map_err(|e| e.to_string())?,
        mesh: fs::read(dir.path().join(MESH_FILE)).map_err(|e| e.to_string())?,
        seconds,
    })
}

fn a4(guided: &A4Run) -> Outcome {
    let baseline = a4_run(false)?;
    let minutes = (guided.seconds + baseline.seconds) / 60.0;
    let msg = format!(
        "chamfer guided {:.4} vs no guidance {:.4} (threshold 0.05), {minutes:.1} min for both runs",
        guided.chamfer, baseline.chamfer
    );
    if guided.chamfer <= 0.05 && guided.chamfer < baseline.chamfer {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn a6(first: &A4Run) -> Outcome {
    let second = a4_run(true)?;
    let same_ckpt = first.checkpoint == second.checkpoint;
    let same_mesh = first.mesh == second.mesh;
    let msg = format!(
        "checkpoint {} ({} bytes), mesh {} ({} bytes)",
        if same_ckpt { "identical" } else { "differs" },
        first.checkpoint.len(),
        if same_mesh { "identical" } else { "differs" },
        first.mesh.len()
    );
    if same_ckpt && same_mesh {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// A5

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let na = rng.random_range(1..=100);
        let nb = rng.random_range(1..=100);
        let a: Vec<_> = (0..na).map(|_| random_vec(&mut rng, 1.0)).collect();
        let b: Vec<_> = (0..nb).map(|_| random_vec(&mut rng, 1.0)).collect();
        let fast = chamfer_mm(&a, &b).map_err(|e| e.to_string())?;
        let slow = chamfer_mm_brute_force(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((fast - slow).abs());
    }
    let mut icp_worst = 0.0f64;
    for _ in 0..20 {
        let src: Vec<_> = (0..300).map(|_| Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), rng.random_range(-0.1..0.1))).collect();
        let truth = RigidTransform {
            rotation: *rodrigues_rotation(unit(&mut rng), rng.random_range(-90.0..90.0)).unwrap().matrix(),
            translation: random_vec(&mut rng, 0.5),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let wobble = RigidTransform {
            rotation: *rodrigues_rotation(unit(&mut rng), 5.0).unwrap().matrix(),
            translation: unit(&mut rng) * 0.01,
        };
        let r = icp_align(&src, &dst, wobble.compose(&truth), 100, 1e-12).map_err(|e| e.to_string())?;
        let err = r.transform.rotation.frobenius_distance(&truth.rotation).max(r.transform.translation.distance(&truth.translation));
        icp_worst = icp_worst.max(err);
    }
    let msg = format!("chamfer vs brute force max |diff| {worst:.1e} mm over 200 sets; ICP worst pose error {icp_worst:.1e} over 20 motions");
    if worst <= 1e-9 && icp_worst <= 1e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// A7

fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_px = 0.0f64;
    for _ in 0..5 {
        let intr = CameraIntrinsics::new(
            rng.random_range(300.0..600.0),
            rng.random_range(300.0..600.0),
            rng.random_range(60.0..100.0),
            rng.random_range(40.0..80.0),
            160,
            120,
        )
        .unwrap();
        let eye = random_vec(&mut rng, 2.0);
        let pose = CameraPose::look_at(eye, random_vec(&mut rng, 0.2), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let depth: Vec<u16> = (0..160 * 120).map(|_| if rng.random_bool(0.1) { 0 } else { rng.random_range(300..6000) }).collect();
        let pts = depth_points(&depth, &intr, &pose);
        let pixels = (0..160 * 120).filter(|i| depth[*i] > 0);
        for (i, p) in pixels.zip(&pts) {
            let (u, v) = project(&intr, &pose, p).ok_or("point behind the camera")?;
            let (pu, pv) = ((i % 160) as f64 + 0.5, (i / 160) as f64 + 0.5);
            worst_px = worst_px.max(((u - pu).powi(2) + (v - pv).powi(2)).sqrt());
        }
    }

    let blob: Vec<_> = (0..2000).map(|_| unit(&mut rng) * rng.random_range(0.0f64..1.0).cbrt() * 0.8 + Vec3::new(1.0, -2.0, 0.5)).collect();
    let n_blob = centralization(&blob, DatasetKind::DepthCamera).map_err(|e| e.to_string())?;
    let max_norm = blob.iter().map(|p| n_blob.apply(p).norm()).fold(0.0, f64::max);

    // A dense cluster at one end of a long thin bar: the center of mass sits
    // far from the box center.
    let mut bar: Vec<_> = (0..200).map(|_| Vec3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..0.2), rng.random_range(0.0..0.2))).collect();
    bar.extend((0..1800).map(|_| Vec3::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.2), rng.random_range(0.0..0.2))));
    let n_bar = centralization(&bar, DatasetKind::DepthCamera).map_err(|e| e.to_string())?;
    let bar_norm = bar.iter().map(|p| n_bar.apply(p).norm()).fold(0.0, f64::max);

    let msg = format!(
        "reprojection error max {worst_px:.2e} px; max norm after scaling {max_norm:.15} (blob), {bar_norm:.15} (bar); \
         box center used: blob {}, bar {} (ratio threshold {BOX_CENTER_RATIO})",
        n_blob.used_box_center, n_bar.used_box_center
    );
    let exact = |v: f64| (v - 0.5).abs() <= 1e-12;
    if worst_px <= 0.5 && exact(max_norm) && exact(bar_norm) && !n_blob.used_box_center && n_bar.used_box_center {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("SDFILL_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let mut failed = 0;
    let mut report = |id: &str, name: &str, t0: Instant, outcome: Outcome| {
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("{id} PASS {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("{id} FAIL {name}: {msg} [{secs:.1}s]");
            }
        }
    };
    let simple: [(&str, &str, fn() -> Outcome); 5] = [
        ("A1", "gradient correctness", a1),
        ("A2", "density and rendering oracle", a2),
        ("A3", "curriculum conformance", a3),
        ("A5", "chamfer and ICP oracle", a5),
        ("A7", "ingest round trips", a7),
    ];
    for (id, name, f) in simple {
        if wanted(id) {
            let t0 = Instant::now();
            report(id, name, t0, f());
        }
    }
    if wanted("A4") || wanted("A6") {
        let t0 = Instant::now();
        match a4_run(true) {
            Ok(guided) => {
                if wanted("A4") {
                    report("A4", "mock-guidance end to end", t0, a4(&guided));
                }
                if wanted("A6") {
                    report("A6", "determinism", Instant::now(), a6(&guided));
                }
            }
            Err(e) => {
                for id in ["A4", "A6"].into_iter().filter(|id| wanted(id)) {
                    report(id, "guided run", t0, Err(e.clone()));
                }
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

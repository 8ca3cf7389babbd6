use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;

use sdfill::evalx::{chamfer_mm, icp_align, sample_mesh, RigidTransform, TriangleMesh};
use sdfill::ingest::load_points;
use sdfill::Vec3d;

const ICP_ITERATIONS: usize = 100;
const ICP_TOLERANCE: f64 = 1e-10;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted surface (PLY mesh or point cloud, metres).
    #[arg(long)]
    pred: PathBuf,
    /// Reference surface (PLY mesh or point cloud, metres).
    #[arg(long)]
    gt: PathBuf,
    /// Rigidly align the prediction to the reference before measuring.
    #[arg(long)]
    icp: bool,
    /// Points sampled from each mesh; point clouds are used as they are.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn surface_points(path: &Path, samples: usize, seed: u64) -> Result<Vec<Vec3d>> {
    let mesh = TriangleMesh::read_ply(path).with_context(|| format!("reading {}", path.display()))?;
    if mesh.triangles.is_empty() {
        return Ok(load_points(path)?);
    }
    Ok(sample_mesh(&mesh, samples, seed)?)
}

pub fn run(args: EvalArgs) -> Result<()> {
    let mut pred = surface_points(&args.pred, args.samples, args.seed)?;
    let gt = surface_points(&args.gt, args.samples, args.seed.wrapping_add(1))?;
    let mut icp = serde_json::Value::Null;
    if args.icp {
        let r = icp_align(&pred, &gt, RigidTransform::identity(), ICP_ITERATIONS, ICP_TOLERANCE)?;
        pred = pred.iter().map(|p| r.transform.apply(p)).collect();
        icp = json!({ "converged": r.converged, "rms": r.rms, "iterations": r.iterations });
    }
    let chamfer = chamfer_mm(&pred, &gt)?;
    println!("Chamfer distance: {chamfer:.4} mm");
    let record = json!({
        "pred": args.pred.display().to_string(),
        "gt": args.gt.display().to_string(),
        "chamfer_mm": chamfer,
        "samples": args.samples,
        "seed": args.seed,
        "icp": icp,
    });
    println!("{record}");
    Ok(())
}

use std::path::Path;

use image::{Rgba, RgbaImage};

use super::{add_noise, weighted_residual, GuidanceGradient, GuidanceProvider, GuidanceRequest, NoiseSchedule, ViewAngles};
use crate::error::{format_error, invalid, Error, Result};

/// A reference render with premultiplied color and coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceView {
    pub view: ViewAngles,
    pub width: usize,
    pub height: usize,
    /// Premultiplied RGB, `H x W x 3`.
    pub rgb: Vec<f64>,
    /// Coverage per pixel, `H x W`.
    pub alpha: Vec<f64>,
}

impl ReferenceView {
    pub fn new(view: ViewAngles, width: usize, height: usize, rgb: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if rgb.len() != width * height * 3 || alpha.len() != width * height || width == 0 || height == 0 {
            return Err(invalid("reference image buffers do not match its size"));
        }
        Ok(ReferenceView { view, width, height, rgb, alpha })
    }

    /// Reference composited over `background`, resampled to `width x height`.
    pub fn target(&self, width: usize, height: usize, background: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; width * height * 3];
        for y in 0..height {
            for x in 0..width {
                let (rgb, a) = self.sample(
                    (x as f64 + 0.5) * self.width as f64 / width as f64 - 0.5,
                    (y as f64 + 0.5) * self.height as f64 / height as f64 - 0.5,
                );
                for c in 0..3 {
                    out[(y * width + x) * 3 + c] = rgb[c] + (1.0 - a) * background[c];
                }
            }
        }
        out
    }

    fn sample(&self, fx: f64, fy: f64) -> ([f64; 3], f64) {
        if fx.fract() == 0.0 && fy.fract() == 0.0 && fx >= 0.0 && fy >= 0.0 {
            let i = fy as usize * self.width + fx as usize;
            return ([self.rgb[3 * i], self.rgb[3 * i + 1], self.rgb[3 * i + 2]], self.alpha[i]);
        }
        let cx = fx.clamp(0.0, (self.width - 1) as f64);
        let cy = fy.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (cx - x0 as f64, cy - y0 as f64);
        let mut rgb = [0.0; 3];
        let mut a = 0.0;
        for (xx, yy, w) in [
            (x0, y0, (1.0 - tx) * (1.0 - ty)),
            (x1, y0, tx * (1.0 - ty)),
            (x0, y1, (1.0 - tx) * ty),
            (x1, y1, tx * ty),
        ] {
            let i = yy * self.width + xx;
            for c in 0..3 {
                rgb[c] += w * self.rgb[3 * i + c];
            }
            a += w * self.alpha[i];
        }
        (rgb, a)
    }
}

/// Deterministic stand-in for a text-to-image denoiser: predicts the noise
/// that would map the noised render back onto the reference for its view,
/// so the SDS gradient pulls renders toward the references.
#[derive(Clone, Debug)]
pub struct MockGuidance {
    views: Vec<ReferenceView>,
    /// Largest angular distance, in degrees, at which a request snaps to a
    /// reference.
    pub snap_degrees: f64,
}

fn direction(v: &ViewAngles) -> [f64; 3] {
    let (az, el) = (v.azimuth.to_radians(), v.elevation.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

/// Great-circle distance between two view directions, in degrees.
pub fn angular_distance(a: &ViewAngles, b: &ViewAngles) -> f64 {
    let (da, db) = (direction(a), direction(b));
    let dot: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

impl MockGuidance {
    pub fn new(views: Vec<ReferenceView>) -> Result<Self> {
        if views.is_empty() {
            return Err(invalid("mock guidance needs at least one reference view"));
        }
        Ok(MockGuidance { views, snap_degrees: 20.0 })
    }

    pub fn views(&self) -> &[ReferenceView] {
        &self.views
    }

    /// The reference nearest to `view` within the snap radius.
    pub fn snap_view(&self, view: Option<&ViewAngles>) -> Result<&ReferenceView> {
        match view {
            None if self.views.len() == 1 => Ok(&self.views[0]),
            None => Err(Error::GuidanceUnavailable("request carries no view for a view-keyed mock".into())),
            Some(v) => {
                let (best, dist) = self
                    .views
                    .iter()
                    .map(|r| (r, angular_distance(&r.view, v)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty");
                if dist > self.snap_degrees {
                    return Err(Error::GuidanceUnavailable(format!(
                        "no reference within {}° of azimuth {:.1}°, elevation {:.1}°",
                        self.snap_degrees, v.azimuth, v.elevation
                    )));
                }
                Ok(best)
            }
        }
    }

    /// Loads `*.png` references named `az<deg>_el<deg>.png` (RGBA, straight
    /// alpha).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut views = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let path = e.path();
            if path.extension().and_then(|s| s.to_str()) != Some("png") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let view = parse_view_name(stem).ok_or_else(|| {
                format_error(&path.display().to_string(), "file name", "expected az<deg>_el<deg>.png")
            })?;
            let img = image::open(&path)?.to_rgba8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut rgb = Vec::with_capacity(w * h * 3);
            let mut alpha = Vec::with_capacity(w * h);
            for p in img.pixels() {
                let a = p[3] as f64 / 255.0;
                for c in 0..3 {
                    rgb.push(p[c] as f64 / 255.0 * a);
                }
                alpha.push(a);
            }
            views.push(ReferenceView::new(view, w, h, rgb, alpha)?);
        }
        if views.is_empty() {
            return Err(Error::GuidanceUnavailable(format!("no reference images in {}", dir.display())));
        }
        Self::new(views)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for r in &self.views {
            let mut img = RgbaImage::new(r.width as u32, r.height as u32);
            for (i, p) in img.pixels_mut().enumerate() {
                let a = r.alpha[i].clamp(0.0, 1.0);
                let mut px = [0u8; 4];
                for c in 0..3 {
                    let straight = if a > 0.0 { r.rgb[3 * i + c] / a } else { 0.0 };
                    px[c] = (straight.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                px[3] = (a * 255.0).round() as u8;
                *p = Rgba(px);
            }
            img.save(dir.join(view_file_name(&r.view)))?;
        }
        Ok(())
    }
}

pub fn view_file_name(v: &ViewAngles) -> String {
    format!("az{}_el{}.png", v.azimuth, v.elevation)
}

fn parse_view_name(stem: &str) -> Option<ViewAngles> {
    let (az, el) = stem.strip_prefix("az")?.split_once("_el")?;
    Some(ViewAngles { azimuth: az.parse().ok()?, elevation: el.parse().ok()? })
}

impl GuidanceProvider for MockGuidance {
    fn sds_grad(&self, request: &GuidanceRequest, schedule: &NoiseSchedule) -> Result<GuidanceGradient> {
        let reference = self.snap_view(request.view.as_ref())?;
        let target = reference.target(request.width, request.height, request.background);
        let t = request.t;
        let noised = add_noise(&request.image, &request.epsilon, t, schedule)?;
        let ab = schedule.alpha_bar(t);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let eps_hat: Vec<f64> = noised.iter().zip(&target).map(|(it, r)| (it - sa * r) / sb).collect();
        Ok(GuidanceGradient {
            width: request.width,
            height: request.height,
            grad: weighted_residual(&eps_hat, &request.epsilon, t, schedule),
            model_id: self.model_id(),
        })
    }

    fn model_id(&self) -> String {
        "mock".into()
    }
}

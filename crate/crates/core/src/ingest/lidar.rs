//! Spherical projection of LiDAR returns into a fixed range grid.

use crate::error::{invalid, Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Scalar;

pub const LIDAR_ROWS: usize = 64;
pub const LIDAR_COLS: usize = 1024;
/// Columns added on each side of the occupied span.
pub const CROP_MARGIN: usize = 5;

/// Vertical field of view, degrees above and below the horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarFov {
    pub up: f64,
    pub down: f64,
}

impl Default for LidarFov {
    fn default() -> Self {
        // 26.8 degrees total
        LidarFov { up: 2.0, down: -24.8 }
    }
}

impl LidarFov {
    pub fn symmetric(total: f64) -> Self {
        LidarFov { up: total / 2.0, down: -total / 2.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.up > self.down) || !self.up.is_finite() || !self.down.is_finite() {
            return Err(invalid(format!("bad lidar field of view {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    pub fov: LidarFov,
    /// Row-major `64 x 1024`, 0 for empty cells.
    pub ranges: Vec<f64>,
    /// Index of the input point stored per cell.
    pub source: Vec<Option<usize>>,
    /// First cropped column; the crop may wrap past column 1023.
    pub min_col: usize,
    /// Last cropped column.
    pub max_col: usize,
}

impl RangeImage {
    pub fn range(&self, row: usize, col: usize) -> f64 {
        self.ranges[row * LIDAR_COLS + col]
    }

    pub fn crop_width(&self) -> usize {
        (self.max_col + LIDAR_COLS - self.min_col) % LIDAR_COLS + 1
    }

    /// Cropped columns in scan order.
    pub fn crop_columns(&self) -> Vec<usize> {
        (0..self.crop_width()).map(|k| (self.min_col + k) % LIDAR_COLS).collect()
    }

    /// Unit direction through the center of a cell.
    pub fn cell_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let az = 180.0 - (col as f64 + 0.5) * 360.0 / LIDAR_COLS as f64;
        let el = self.fov.up - (row as f64 + 0.5) * (self.fov.up - self.fov.down) / LIDAR_ROWS as f64;
        let (az, el) = (az.to_radians(), el.to_radians());
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }
}

/// Grid cell of a sensor-frame point, or `None` outside the vertical fov.
pub fn cell_of(p: [f64; 3], fov: &LidarFov) -> Option<(usize, usize, f64)> {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r <= 0.0 || !r.is_finite() {
        return None;
    }
    let az = p[1].atan2(p[0]).to_degrees();
    let el = (p[2] / r).asin().to_degrees();
    // azimuth +180 maps to column 0, azimuth 0 to the center column
    let u = (180.0 - az) / 360.0;
    // values within 1e-9 of a cell boundary resolve to the later cell
    let col = ((u * LIDAR_COLS as f64 + 1e-9).floor() as isize).rem_euclid(LIDAR_COLS as isize) as usize;
    let v = (fov.up - el) / (fov.up - fov.down);
    if !(0.0..=1.0).contains(&v) {
        return None;
    }
    let row = ((v * LIDAR_ROWS as f64 + 1e-9).floor() as usize).min(LIDAR_ROWS - 1);
    Some((row, col, r))
}

/// Projects sensor-frame points into the range grid, keeping the nearest
/// return per cell, and crops to the occupied columns plus a margin.
pub fn lidar_project<T: Scalar>(points: &[Vec3<T>], fov: LidarFov) -> Result<RangeImage> {
    fov.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyObservation("no lidar points".into()));
    }
    let mut ranges = vec![0.0; LIDAR_ROWS * LIDAR_COLS];
    let mut source = vec![None; LIDAR_ROWS * LIDAR_COLS];
    let mut occupied = [false; LIDAR_COLS];
    for (i, p) in points.iter().enumerate() {
        let Some((row, col, r)) = cell_of(p.to_f64(), &fov) else { continue };
        let k = row * LIDAR_COLS + col;
        if ranges[k] == 0.0 || r < ranges[k] {
            ranges[k] = r;
            source[k] = Some(i);
        }
        occupied[col] = true;
    }
    let cols: Vec<usize> = (0..LIDAR_COLS).filter(|c| occupied[*c]).collect();
    if cols.is_empty() {
        return Err(Error::EmptyObservation("no lidar point inside the vertical field of view".into()));
    }
    // the occupied arc is the complement of the widest empty gap
    let mut gap_end = cols[0];
    let mut widest = (cols[0] + LIDAR_COLS) - cols[cols.len() - 1];
    for w in cols.windows(2) {
        if w[1] - w[0] > widest {
            widest = w[1] - w[0];
            gap_end = w[1];
        }
    }
    let span_start = gap_end;
    let span_end = (gap_end + LIDAR_COLS - (widest - 1) - 1) % LIDAR_COLS;
    let span = (span_end + LIDAR_COLS - span_start) % LIDAR_COLS;
    let (min_col, max_col) = if span + 2 * CROP_MARGIN + 1 >= LIDAR_COLS {
        (0, LIDAR_COLS - 1)
    } else {
        ((span_start + LIDAR_COLS - CROP_MARGIN) % LIDAR_COLS, (span_end + CROP_MARGIN) % LIDAR_COLS)
    };
    Ok(RangeImage { fov, ranges, source, min_col, max_col })
}

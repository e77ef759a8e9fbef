//! Orthographic frontal depth rendering.
//!
//! Points are projected onto the xy-plane bounding box, viewed from +z. Each pixel
//! keeps the point with the largest z (the one nearest to the viewer): its z value
//! as depth and its normal as the three normal channels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height × width`; 0 where no point landed.
    pub depth: Vec<f64>,
    pub occupied: Vec<bool>,
    pub normal_channels: Vec<Point3>,
    /// `(row, col)` of every point, including occluded ones.
    pub pixel_of_point: Vec<(usize, usize)>,
    /// Side length of a (square) pixel in cloud units.
    pub pixel_size: f64,
}

impl DepthImage {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.occupied[self.at(row, col)]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Writes depth as a 16-bit binary PGM; occupied depths are scaled into
    /// `1..=65535`, empty pixels are 0.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let (lo, hi) = self
            .depth
            .iter()
            .zip(&self.occupied)
            .filter(|(_, &o)| o)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&d, _)| (lo.min(d), hi.max(d)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut bytes = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for (d, &occ) in self.depth.iter().zip(&self.occupied) {
            let v: u16 = if occ {
                (1.0 + (d - lo) / span * 65534.0).round() as u16
            } else {
                0
            };
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }
}

/// Renders `cloud` (which must carry normals) into a `height × width` depth image.
pub fn render_depth(cloud: &PointCloud, resolution: (usize, usize)) -> Result<DepthImage> {
    let (height, width) = resolution;
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("depth resolution must be non-zero".into()));
    }
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::InvalidArgument("depth rendering needs normals".into()))?;
    let points = cloud.points();
    let (mut xmin, mut xmax, mut ymin, mut ymax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let (ex, ey) = (xmax - xmin, ymax - ymin);
    if ex <= 0.0 && ey <= 0.0 && points.len() > 1 {
        return Err(Error::DegenerateProjection);
    }
    let mut pixel_size = (ex / width as f64).max(ey / height as f64);
    if pixel_size <= 0.0 {
        pixel_size = 1.0;
    }
    // center the footprint in the image
    let x0 = (xmin + xmax) / 2.0 - pixel_size * width as f64 / 2.0;
    let y1 = (ymin + ymax) / 2.0 + pixel_size * height as f64 / 2.0;

    let mut img = DepthImage {
        width,
        height,
        depth: vec![0.0; width * height],
        occupied: vec![false; width * height],
        normal_channels: vec![[0.0; 3]; width * height],
        pixel_of_point: Vec::with_capacity(points.len()),
        pixel_size,
    };
    for (p, n) in points.iter().zip(normals) {
        let col = (((p[0] - x0) / pixel_size).floor().max(0.0) as usize).min(width - 1);
        let row = (((y1 - p[1]) / pixel_size).floor().max(0.0) as usize).min(height - 1);
        img.pixel_of_point.push((row, col));
        let k = img.at(row, col);
        if !img.occupied[k] || p[2] > img.depth[k] {
            img.occupied[k] = true;
            img.depth[k] = p[2];
            img.normal_channels[k] = *n;
        }
    }
    Ok(img)
}

//! Window statistics of the depth image, read back at each point's pixel.

use super::depth::DepthImage;
use super::fpfh::{FpfhDescriptor, FPFH_LEN};
use crate::error::{Error, Result};

/// Values produced per window scale: mean, std, range and mean gradient magnitude
/// of depth, plus the mean normal.
pub const STATS_PER_SCALE: usize = 7;

#[derive(Debug, Clone)]
pub struct DepthStatistics {
    pub scales: Vec<usize>,
    /// One row of `STATS_PER_SCALE * scales.len()` values per point.
    pub rows: Vec<Vec<f64>>,
    /// Point windows that held no occupied pixel at some scale.
    pub empty_windows: usize,
}

/// Per-pixel depth slope magnitude (depth change per unit length).
///
/// Central differences where both neighbors are occupied, one-sided where only
/// one is, 0 otherwise. Empty pixels get 0.
pub fn gradient_magnitude(img: &DepthImage) -> Vec<f64> {
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0; h * w];
    let d = |r: usize, c: usize| img.depth[img.at(r, c)];
    let occ = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && img.is_occupied(r as usize, c as usize)
    };
    for r in 0..h {
        for c in 0..w {
            if !img.is_occupied(r, c) {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            let gx = match (occ(ri, ci - 1), occ(ri, ci + 1)) {
                (true, true) => (d(r, c + 1) - d(r, c - 1)) / 2.0,
                (false, true) => d(r, c + 1) - d(r, c),
                (true, false) => d(r, c) - d(r, c - 1),
                (false, false) => 0.0,
            };
            let gy = match (occ(ri - 1, ci), occ(ri + 1, ci)) {
                (true, true) => (d(r + 1, c) - d(r - 1, c)) / 2.0,
                (false, true) => d(r + 1, c) - d(r, c),
                (true, false) => d(r, c) - d(r - 1, c),
                (false, false) => 0.0,
            };
            out[img.at(r, c)] = gx.hypot(gy) / img.pixel_size;
        }
    }
    out
}

/// Statistics over the occupied pixels of the `(2r+1)²` window at `(row, col)`.
/// Returns `None` when the window holds no occupied pixel.
pub fn window_statistics(img: &DepthImage, grad: &[f64], row: usize, col: usize, r: usize) -> Option<[f64; STATS_PER_SCALE]> {
    let r0 = row.saturating_sub(r);
    let r1 = (row + r).min(img.height - 1);
    let c0 = col.saturating_sub(r);
    let c1 = (col + r).min(img.width - 1);
    let mut n = 0usize;
    let (mut sum, mut sum2, mut lo, mut hi, mut gsum) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let mut nsum = [0.0; 3];
    for rr in r0..=r1 {
        for cc in c0..=c1 {
            let k = img.at(rr, cc);
            if !img.occupied[k] {
                continue;
            }
            let d = img.depth[k];
            n += 1;
            sum += d;
            sum2 += d * d;
            lo = lo.min(d);
            hi = hi.max(d);
            gsum += grad[k];
            for (s, v) in nsum.iter_mut().zip(&img.normal_channels[k]) {
                *s += v;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0);
    Some([
        mean,
        var.sqrt(),
        hi - lo,
        gsum / nf,
        nsum[0] / nf,
        nsum[1] / nf,
        nsum[2] / nf,
    ])
}

/// Multi-scale window statistics for every point, looked up through its pixel.
pub fn extract_2d_features(img: &DepthImage, scales: &[usize]) -> Result<DepthStatistics> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("at least one window scale is required".into()));
    }
    let grad = gradient_magnitude(img);
    // per-pixel cache: occluded points share their pixel's statistics
    let mut cache: std::collections::HashMap<(usize, usize), (Vec<f64>, usize)> = Default::default();
    let mut empty_windows = 0;
    let rows = img
        .pixel_of_point
        .iter()
        .map(|&(row, col)| {
            let (stats, empties) = cache
                .entry((row, col))
                .or_insert_with(|| {
                    let mut v = Vec::with_capacity(STATS_PER_SCALE * scales.len());
                    let mut empties = 0;
                    for &r in scales {
                        match window_statistics(img, &grad, row, col, r) {
                            Some(s) => v.extend_from_slice(&s),
                            None => {
                                empties += 1;
                                v.extend_from_slice(&[0.0; STATS_PER_SCALE]);
                            }
                        }
                    }
                    (v, empties)
                })
                .clone();
            empty_windows += empties;
            stats
        })
        .collect();
    Ok(DepthStatistics {
        scales: scales.to_vec(),
        rows,
        empty_windows,
    })
}

/// Concatenates depth statistics with FPFH histograms into the per-point 2D feature.
pub fn assemble_f2(stats: &DepthStatistics, fpfh: &[FpfhDescriptor]) -> Result<Vec<Vec<f64>>> {
    if stats.rows.len() != fpfh.len() {
        return Err(Error::DimensionMismatch {
            expected: stats.rows.len(),
            got: fpfh.len(),
        });
    }
    Ok(stats
        .rows
        .iter()
        .zip(fpfh)
        .map(|(s, f)| {
            let mut v = Vec::with_capacity(s.len() + FPFH_LEN);
            v.extend_from_slice(s);
            v.extend_from_slice(&f.histogram);
            v
        })
        .collect())
}

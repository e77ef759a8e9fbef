//! Fast Point Feature Histograms.
//!
//! Each point gets a 3×11 histogram of the pair features (α, φ, θ) between its
//! normal frame and those of its radius neighbors (the SPFH). The FPFH adds the
//! distance-weighted mean of the neighbors' SPFHs. Sub-histograms are kept in
//! percentages, so each sums to 100.

use crate::error::{Error, Result};
use crate::geometry::{build_index, cross, dot, norm, scale, sub, Point3, PointCloud};

pub const BINS: usize = 11;
pub const FPFH_LEN: usize = 3 * BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct FpfhDescriptor {
    pub histogram: [f64; FPFH_LEN],
}

impl FpfhDescriptor {
    pub fn flat() -> Self {
        FpfhDescriptor {
            histogram: [100.0 / BINS as f64; FPFH_LEN],
        }
    }

    pub fn sub_histogram(&self, which: usize) -> &[f64] {
        &self.histogram[which * BINS..(which + 1) * BINS]
    }
}

#[derive(Debug, Clone)]
pub struct FpfhOutput {
    pub descriptors: Vec<FpfhDescriptor>,
    /// Points that had no neighbor within the radius.
    pub isolated: usize,
}

/// Pair features `(alpha, phi, theta)` for an oriented point pair, with the source
/// chosen so that the result does not depend on argument order.
pub fn pair_features(p1: &Point3, n1: &Point3, p2: &Point3, n2: &Point3) -> Option<[f64; 3]> {
    let d = sub(p2, p1);
    let len = norm(&d);
    if len < 1e-12 {
        return None;
    }
    let d = scale(&d, 1.0 / len);
    let a1 = dot(n1, &d);
    let a2 = dot(n2, &d);
    let (u, nt, d, phi) = if a1.abs().acos() > a2.abs().acos() {
        (*n2, *n1, scale(&d, -1.0), -a2)
    } else {
        (*n1, *n2, d, a1)
    };
    let v = cross(&d, &u);
    let vn = norm(&v);
    if vn < 1e-12 {
        // displacement parallel to the source normal: frame undefined
        return Some([0.0, phi, 0.0]);
    }
    let v = scale(&v, 1.0 / vn);
    let w = cross(&u, &v);
    let alpha = dot(&v, &nt);
    let theta = dot(&w, &nt).atan2(dot(&u, &nt));
    Some([alpha, phi, theta])
}

fn bin_of(value: f64, lo: f64, hi: f64) -> usize {
    let b = ((value - lo) / (hi - lo) * BINS as f64).floor();
    (b.max(0.0) as usize).min(BINS - 1)
}

fn normalize_percent(hist: &mut [f64; FPFH_LEN]) {
    for sub in hist.chunks_mut(BINS) {
        let total: f64 = sub.iter().sum();
        if total > 0.0 {
            for v in sub.iter_mut() {
                *v *= 100.0 / total;
            }
        } else {
            sub.fill(100.0 / BINS as f64);
        }
    }
}

/// Computes FPFH descriptors with neighbors taken within `radius`.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> Result<FpfhOutput> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("FPFH radius must be positive, got {radius}")));
    }
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::InvalidArgument("FPFH needs normals".into()))?;
    let points = cloud.points();
    let index = build_index(cloud)?;

    let neighborhoods: Vec<Vec<(usize, f64)>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .within_radius(p, radius)
                .into_iter()
                .filter(|&(j, d)| j != i && d > 1e-12)
                .collect()
        })
        .collect();

    let mut isolated = 0;
    let spfh: Vec<[f64; FPFH_LEN]> = neighborhoods
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut hist = [0.0; FPFH_LEN];
            for &(j, _) in nbrs {
                if let Some([alpha, phi, theta]) =
                    pair_features(&points[i], &normals[i], &points[j], &normals[j])
                {
                    hist[bin_of(alpha, -1.0, 1.0)] += 1.0;
                    hist[BINS + bin_of(phi, -1.0, 1.0)] += 1.0;
                    hist[2 * BINS + bin_of(theta, -std::f64::consts::PI, std::f64::consts::PI)] += 1.0;
                }
            }
            normalize_percent(&mut hist);
            hist
        })
        .collect();

    let descriptors = neighborhoods
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut hist = spfh[i];
            if nbrs.is_empty() {
                isolated += 1;
                return FpfhDescriptor { histogram: hist };
            }
            let k = nbrs.len() as f64;
            for &(j, d) in nbrs {
                for (h, s) in hist.iter_mut().zip(&spfh[j]) {
                    *h += s / d / k;
                }
            }
            normalize_percent(&mut hist);
            FpfhDescriptor { histogram: hist }
        })
        .collect();
    Ok(FpfhOutput { descriptors, isolated })
}

/// L1 distance per sub-histogram.
pub fn sub_histogram_l1(a: &FpfhDescriptor, b: &FpfhDescriptor) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (s, o) in out.iter_mut().enumerate() {
        *o = a
            .sub_histogram(s)
            .iter()
            .zip(b.sub_histogram(s))
            .map(|(x, y)| (x - y).abs())
            .sum();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize as unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coplanar_points_concentrate_in_central_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point3> = (0..150)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0])
            .collect();
        let cloud = PointCloud::new(pts).unwrap().with_normals(vec![[0.0, 0.0, 1.0]; 150]).unwrap();
        let out = compute_fpfh(&cloud, 0.4).unwrap();
        assert_eq!(out.isolated, 0);
        for d in &out.descriptors {
            for s in 0..3 {
                let sub = d.sub_histogram(s);
                assert!((sub.iter().sum::<f64>() - 100.0).abs() < 1e-6);
                assert!((sub[BINS / 2] - 100.0).abs() < 1e-9, "{sub:?}");
            }
        }
    }

    #[test]
    fn isolated_point_gets_flat_descriptor() {
        let cloud = PointCloud::new(vec![[0.0; 3], [5.0, 0.0, 0.0]])
            .unwrap()
            .with_normals(vec![[0.0, 0.0, 1.0]; 2])
            .unwrap();
        let out = compute_fpfh(&cloud, 1.0).unwrap();
        assert_eq!(out.isolated, 2);
        assert_eq!(out.descriptors[0], FpfhDescriptor::flat());
    }

    #[test]
    fn pair_features_are_symmetric_in_argument_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p1 = [rng.gen(), rng.gen(), rng.gen()];
            let p2 = [rng.gen(), rng.gen(), rng.gen()];
            let n1 = unit(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0]);
            let n2 = unit(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0]);
            let a = pair_features(&p1, &n1, &p2, &n2).unwrap();
            let b = pair_features(&p2, &n2, &p1, &n1).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

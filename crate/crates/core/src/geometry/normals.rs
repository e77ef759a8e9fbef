use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{build_index, centroid_of, dot, normalize, sub, Point3, PointCloud};
use crate::error::{Error, Result};

/// Where estimated normals should point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Viewpoint {
    /// A viewer at infinity along this direction.
    Direction(Point3),
    /// Normals point toward this location.
    Toward(Point3),
    /// Normals point away from this location (outward for a closed surface around it).
    AwayFrom(Point3),
}

impl Default for Viewpoint {
    fn default() -> Self {
        Viewpoint::Direction([0.0, 0.0, 1.0])
    }
}

impl Viewpoint {
    fn direction_at(&self, p: &Point3) -> Point3 {
        match self {
            Viewpoint::Direction(d) => normalize(d),
            Viewpoint::Toward(v) => normalize(&sub(v, p)),
            Viewpoint::AwayFrom(v) => normalize(&sub(p, v)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighborhood covariance had rank < 2; these received the
    /// viewpoint direction as their normal.
    pub degenerate: usize,
}

const RANK_TOLERANCE: f64 = 1e-12;

/// PCA normals from the `k`-nearest neighborhood of each point, oriented toward `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: Viewpoint) -> Result<NormalEstimate> {
    if k < 3 || k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs 3 <= k <= M (k = {k}, M = {})",
            cloud.len()
        )));
    }
    let index = build_index(cloud)?;
    let points = cloud.points();
    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = 0;
    for p in points {
        let nbrs = index.query(p, k);
        let c = centroid_of(nbrs.iter().map(|&(i, _)| &points[i]));
        let mut cov = Matrix3::<f64>::zeros();
        for &(i, _) in &nbrs {
            let d = sub(&points[i], &c);
            for r in 0..3 {
                for s in 0..3 {
                    cov[(r, s)] += d[r] * d[s];
                }
            }
        }
        let view = viewpoint.direction_at(p);
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let largest = eig.eigenvalues[order[2]];
        let middle = eig.eigenvalues[order[1]];
        if largest <= RANK_TOLERANCE || middle <= RANK_TOLERANCE * largest.max(1.0) {
            degenerate += 1;
            normals.push(view);
            continue;
        }
        let v = eig.eigenvectors.column(order[0]);
        let mut n = normalize(&[v[0], v[1], v[2]]);
        if dot(&n, &view) < 0.0 {
            n = [-n[0], -n[1], -n[2]];
        }
        normals.push(n);
    }
    let cloud = cloud.clone().with_normals(normals)?;
    Ok(NormalEstimate { cloud, degenerate })
}

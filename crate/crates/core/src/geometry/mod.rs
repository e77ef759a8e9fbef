//! Point clouds, exact neighbor search, normal estimation, sampling and patches.

mod components;
pub mod io;
mod kdtree;
mod normals;
mod patch;
mod sampling;

pub use components::radius_components;
pub use kdtree::KdTree;
pub use normals::{estimate_normals, NormalEstimate, Viewpoint};
pub use patch::{extract_patches, Patch};
pub use sampling::{farthest_first, farthest_point_sample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Tolerance on the unit length of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// An M×3 point set with optional unit normals and binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Point3>>,
    labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::from_parts(points, None, None)
    }

    pub fn from_parts(
        points: Vec<Point3>,
        normals: Option<Vec<Point3>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let cloud = PointCloud {
            points,
            normals,
            labels,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.points.len();
        if m == 0 {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!("non-finite coordinate at point {i}")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != m {
                return Err(Error::InvalidCloud(format!(
                    "{} normals for {m} points",
                    normals.len()
                )));
            }
            for (i, n) in normals.iter().enumerate() {
                if (norm(n) - 1.0).abs() > NORMAL_TOLERANCE {
                    return Err(Error::InvalidCloud(format!("normal {i} is not unit length")));
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != m {
                return Err(Error::InvalidCloud(format!(
                    "{} labels for {m} points",
                    labels.len()
                )));
            }
            if let Some(i) = labels.iter().position(|&l| l > 1) {
                return Err(Error::InvalidCloud(format!("label {i} is not 0 or 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_normals(mut self, normals: Vec<Point3>) -> Result<Self> {
        self.normals = Some(normals);
        self.validate()?;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Applies `x -> rotation * x + translation` to points, and the rotation to normals.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: Point3) -> Self {
        let rot = |p: &Point3| -> Point3 {
            let mut out = [0.0; 3];
            for (r, o) in rotation.iter().zip(out.iter_mut()) {
                *o = r[0] * p[0] + r[1] * p[1] + r[2] * p[2];
            }
            out
        };
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| add(&rot(p), &translation))
                .collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| normalize(&rot(n))).collect()),
            labels: self.labels.clone(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        centroid_of(self.points.iter())
    }

    /// Median distance from each point to its nearest other point.
    pub fn median_spacing(&self, index: &NeighborIndex) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        let mut d: Vec<f64> = self
            .points
            .iter()
            .map(|p| index.query(p, 2)[1].1)
            .collect();
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }
}

/// Exact Euclidean kNN over the points of one cloud.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    tree: KdTree,
}

/// Builds the spatial index for `cloud`.
pub fn build_index(cloud: &PointCloud) -> Result<NeighborIndex> {
    NeighborIndex::new(cloud.points())
}

impl NeighborIndex {
    pub fn new(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(NeighborIndex {
            tree: KdTree::from_rows(points, 3),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// The `min(k, M)` nearest points as `(index, distance)`.
    pub fn query(&self, p: &Point3, k: usize) -> Vec<(usize, f64)> {
        self.tree.knn(p, k)
    }

    pub fn within_radius(&self, p: &Point3, radius: f64) -> Vec<(usize, f64)> {
        self.tree.within_radius(p, radius)
    }
}

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: &Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &Point3, b: &Point3) -> f64 {
    norm(&sub(a, b))
}

pub(crate) fn normalize(a: &Point3) -> Point3 {
    let n = norm(a);
    if n == 0.0 {
        *a
    } else {
        scale(a, 1.0 / n)
    }
}

pub(crate) fn centroid_of<'a>(points: impl Iterator<Item = &'a Point3>) -> Point3 {
    let mut c = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        c = add(&c, p);
        n += 1;
    }
    if n == 0 {
        c
    } else {
        scale(&c, 1.0 / n as f64)
    }
}

/// Rotation matrix about a unit `axis` by `angle` radians (Rodrigues).
pub fn axis_angle(axis: &Point3, angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = normalize(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
pub fn align_rotation(from: &Point3, to: &Point3) -> [[f64; 3]; 3] {
    let axis = cross(from, to);
    let s = norm(&axis);
    let c = dot(from, to).clamp(-1.0, 1.0);
    if s < 1e-12 {
        if c > 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        // antiparallel: rotate by pi about any perpendicular axis
        let helper = if from[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        return axis_angle(&cross(from, &helper), std::f64::consts::PI);
    }
    axis_angle(&axis, s.atan2(c))
}

pub fn mat_vec(m: &[[f64; 3]; 3], v: &Point3) -> Point3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

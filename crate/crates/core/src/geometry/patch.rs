use serde::{Deserialize, Serialize};

use super::{centroid_of, distance, scale, sub, NeighborIndex, Point3, PointCloud};
use crate::error::{Error, Result};

/// A local neighborhood around a center point, translated to its centroid and
/// scaled into the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub center_index: usize,
    pub member_indices: Vec<usize>,
    pub centered_points: Vec<Point3>,
    pub centroid: Point3,
    pub scale: f64,
}

impl Patch {
    /// Maps a world-space point into this patch's frame.
    pub fn to_frame(&self, p: &Point3) -> Point3 {
        scale(&sub(p, &self.centroid), 1.0 / self.scale)
    }

    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// One patch per center made of the `patch_size` nearest neighbors of the center.
pub fn extract_patches(
    cloud: &PointCloud,
    index: &NeighborIndex,
    centers: &[usize],
    patch_size: usize,
) -> Result<Vec<Patch>> {
    if patch_size == 0 || patch_size > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} out of range for {} points",
            cloud.len()
        )));
    }
    let points = cloud.points();
    centers
        .iter()
        .map(|&center| {
            if center >= points.len() {
                return Err(Error::InvalidArgument(format!("center {center} out of range")));
            }
            let members: Vec<usize> = index
                .query(&points[center], patch_size)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            Ok(make_patch(points, center, members))
        })
        .collect()
}

pub(crate) fn make_patch(points: &[Point3], center: usize, mut members: Vec<usize>) -> Patch {
    if !members.contains(&center) {
        // the center can lose a distance tie against coincident points
        members.pop();
        members.insert(0, center);
    }
    let centroid = centroid_of(members.iter().map(|&i| &points[i]));
    let mut centered: Vec<Point3> = members.iter().map(|&i| sub(&points[i], &centroid)).collect();
    let max_d = centered
        .iter()
        .map(|p| distance(p, &[0.0; 3]))
        .fold(0.0, f64::max);
    let s = if max_d > 0.0 { max_d } else { 1.0 };
    for p in &mut centered {
        *p = scale(p, 1.0 / s);
    }
    Patch {
        center_index: center,
        member_indices: members,
        centered_points: centered,
        centroid,
        scale: s,
    }
}

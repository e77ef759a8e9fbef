use super::{NeighborIndex, PointCloud};
use crate::error::{Error, Result};

/// Connected components of the mask-1 points under the `radius` adjacency graph.
///
/// Components are returned sorted internally and ordered by their smallest member.
pub fn radius_components(cloud: &PointCloud, mask: &[u8], radius: f64) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if mask.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            expected: cloud.len(),
            got: mask.len(),
        });
    }
    let selected: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] == 1).collect();
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let pts: Vec<_> = selected.iter().map(|&i| cloud.points()[i]).collect();
    let index = NeighborIndex::new(&pts)?;

    let mut component = vec![usize::MAX; pts.len()];
    let mut out = Vec::new();
    for seed in 0..pts.len() {
        if component[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        component[seed] = id;
        let mut members = vec![seed];
        let mut stack = vec![seed];
        while let Some(cur) = stack.pop() {
            for (j, _) in index.within_radius(&pts[cur], radius) {
                if component[j] == usize::MAX {
                    component[j] = id;
                    members.push(j);
                    stack.push(j);
                }
            }
        }
        let mut global: Vec<usize> = members.into_iter().map(|j| selected[j]).collect();
        global.sort_unstable();
        out.push(global);
    }
    // seeds are visited in increasing order, so components already sort by smallest member
    Ok(out)
}

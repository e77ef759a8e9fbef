use super::PointCloud;
use crate::error::{Error, Result};

/// Greedy farthest-first traversal over rows of length `dim`, starting at `start`.
///
/// Each subsequent pick maximizes the distance to the already chosen set; ties go
/// to the smaller index. Returns `n` distinct indices.
pub fn farthest_first(data: &[f64], dim: usize, n: usize, start: usize) -> Vec<usize> {
    let total = data.len() / dim;
    assert!(n <= total, "cannot select {n} of {total} rows");
    if n == 0 {
        return Vec::new();
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let dist2 = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut chosen = Vec::with_capacity(n);
    let mut taken = vec![false; total];
    let mut min_d = vec![f64::INFINITY; total];
    let mut current = start;
    loop {
        chosen.push(current);
        taken[current] = true;
        if chosen.len() == n {
            break;
        }
        let c = row(current);
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..total {
            if taken[i] {
                continue;
            }
            let d = dist2(row(i), c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    chosen
}

/// Farthest point sampling of `n` cloud indices; the first index is `seed mod M`.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, seed: u64) -> Result<Vec<usize>> {
    let m = cloud.len();
    if n == 0 || n > m {
        return Err(Error::InvalidArgument(format!(
            "farthest point sampling needs 1 <= n <= M (n = {n}, M = {m})"
        )));
    }
    let flat: Vec<f64> = cloud.points().iter().flatten().copied().collect();
    Ok(farthest_first(&flat, 3, n, (seed % m as u64) as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distance, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn n_equal_m_selects_everything() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [5.0, 1.0, 0.0]]).unwrap();
        let mut got = farthest_point_sample(&cloud, 3, 7).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn square_picks_diagonal() {
        let cloud = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(farthest_point_sample(&cloud, 2, 0).unwrap(), vec![0, 2]);
        assert!(farthest_point_sample(&cloud, 5, 0).is_err());
    }

    #[test]
    fn each_pick_is_the_brute_force_farthest() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3> = (0..100).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let picks = farthest_point_sample(&cloud, 10, 42).unwrap();
        assert_eq!(picks[0], 42);
        for step in 1..picks.len() {
            let set = &picks[..step];
            let min_to_set = |i: usize| set.iter().map(|&j| distance(&pts[i], &pts[j])).fold(f64::INFINITY, f64::min);
            let best = (0..pts.len())
                .filter(|i| !set.contains(i))
                .map(min_to_set)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(min_to_set(picks[step]), best);
        }
    }
}

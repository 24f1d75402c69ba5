use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default neighborhood size of the edge branch.
pub const DEFAULT_K: usize = 16;

/// `k` nearest neighbors per point, excluding the point itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    pub k: usize,
    /// `n × k`, row-major; each row ordered by distance, then index.
    pub indices: Vec<u32>,
}

impl NeighborTable {
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Brute-force kNN with ties broken by the smaller index.
pub fn knn_graph(points: &[Vector3<f64>], k: usize) -> Result<NeighborTable> {
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(Error::TooFewPoints { points: n, k });
    }
    let rows: Vec<Vec<u32>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut cand: Vec<(f64, u32)> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| ((p - q).norm_squared(), j as u32))
                .collect();
            let key = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, key);
                cand.truncate(k);
            }
            cand.sort_unstable_by(key);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(NeighborTable {
        k,
        indices: rows.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_points() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0)];
        let t = knn_graph(&pts, 1).unwrap();
        assert_eq!(t.row(1), &[0]);
        assert_eq!(t.row(2), &[1]);
    }

    #[test]
    fn complete_graph() {
        let pts: Vec<_> = (0..6).map(|i| Vector3::new(i as f64 * 0.3, (i * i) as f64, 1.0)).collect();
        let t = knn_graph(&pts, 5).unwrap();
        for i in 0..6 {
            let mut row = t.row(i).to_vec();
            row.sort();
            let expected: Vec<u32> = (0..6).filter(|&j| j != i as u32).collect();
            assert_eq!(row, expected);
        }
    }

    #[test]
    fn ties_prefer_smaller_index() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        assert_eq!(knn_graph(&pts, 1).unwrap().row(0), &[1]);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Vector3::zeros(); 4];
        assert!(matches!(knn_graph(&pts, 4), Err(Error::TooFewPoints { points: 4, k: 4 })));
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..256)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let t = knn_graph(&pts, 16).unwrap();
        for i in 0..pts.len() {
            let mut all: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
            all.sort_by(|&a, &b| {
                let da = (pts[i] - pts[a]).norm_squared();
                let db = (pts[i] - pts[b]).norm_squared();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            let expected: Vec<u32> = all[..16].iter().map(|&j| j as u32).collect();
            assert_eq!(t.row(i), expected.as_slice());
        }
    }
}

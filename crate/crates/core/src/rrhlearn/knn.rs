//! Brute-force K-nearest-neighbour majority vote.

use crate::error::{Error, Result};

const QUERY_BLOCK: usize = 128;
const ROW_TILE: usize = 1024;
/// Relative slack on the dot-product distance estimate, far above its
/// single-precision rounding error.
const SCREEN_SLACK: f32 = 1e-4;

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

fn sq_norm(a: &[f32]) -> f32 {
    a.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>() as f32
}

/// Training rows stored row-major in single precision.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    dim: usize,
    rows: Vec<f32>,
    norms: Vec<f32>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl KnnIndex {
    pub fn new(features: &[f64], labels: &[usize], dim: usize) -> Result<Self> {
        if labels.is_empty() || dim == 0 {
            return Err(Error::InvalidParameter("KNN needs a non-empty training set".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let rows: Vec<f32> = features.iter().map(|v| *v as f32).collect();
        Ok(Self {
            dim,
            norms: rows.chunks_exact(dim).map(sq_norm).collect(),
            rows,
            labels: labels.to_vec(),
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Majority label among the `k` nearest rows (Euclidean). Equal distances
    /// rank by training index; a tied vote goes to the tied label whose
    /// nearest member is closest.
    pub fn predict(&self, query: &[f64], k: usize) -> Result<usize> {
        Ok(self.predict_batch(query, k)?[0])
    }

    /// `predict` for many row-major queries at once.
    pub fn predict_batch(&self, queries: &[f64], k: usize) -> Result<Vec<usize>> {
        if queries.is_empty() || queries.len() % self.dim != 0 {
            return Err(Error::Dimension {
                expected: self.dim,
                got: queries.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        let k = k.min(self.len());
        let q: Vec<f32> = queries.iter().map(|v| *v as f32).collect();
        let mut out = Vec::with_capacity(q.len() / self.dim);
        let mut gram = vec![0.0f32; QUERY_BLOCK * ROW_TILE];
        for block in q.chunks(QUERY_BLOCK * self.dim) {
            let n_q = block.len() / self.dim;
            let mut best: Vec<Vec<(f32, usize)>> = vec![Vec::with_capacity(k + 1); n_q];
            self.scan_block(block, k, &mut best, &mut gram);
            out.extend(best.iter().map(|b| self.vote(b)));
        }
        Ok(out)
    }

    /// Screens each tile with |q|^2 + |r|^2 - 2 q.r from one matrix product,
    /// then ranks surviving rows by their exact distance.
    fn scan_block(&self, block: &[f32], k: usize, best: &mut [Vec<(f32, usize)>], gram: &mut [f32]) {
        let d = self.dim;
        let n_q = block.len() / d;
        let q_norms: Vec<f32> = block.chunks_exact(d).map(sq_norm).collect();
        for (t, tile) in self.rows.chunks(ROW_TILE * d).enumerate() {
            let base = t * ROW_TILE;
            let n_r = tile.len() / d;
            // SAFETY: `block` is n_q x d, `tile` is read as its d x n_r
            // transpose and `gram` holds at least n_q x n_r values.
            unsafe {
                matrixmultiply::sgemm(
                    n_q,
                    d,
                    n_r,
                    1.0,
                    block.as_ptr(),
                    d as isize,
                    1,
                    tile.as_ptr(),
                    1,
                    d as isize,
                    0.0,
                    gram.as_mut_ptr(),
                    n_r as isize,
                    1,
                );
            }
            for (qi, list) in best.iter_mut().enumerate() {
                let query = &block[qi * d..(qi + 1) * d];
                let qn = q_norms[qi];
                let dots = &gram[qi * n_r..(qi + 1) * n_r];
                for (j, dot) in dots.iter().enumerate() {
                    if list.len() == k {
                        let rn = self.norms[base + j];
                        let approx = qn + rn - 2.0 * dot;
                        if approx - SCREEN_SLACK * (qn + rn) > list[k - 1].0 {
                            continue;
                        }
                    }
                    let dist = sq_dist(&tile[j * d..(j + 1) * d], query);
                    if list.len() == k && dist >= list[k - 1].0 {
                        continue;
                    }
                    let pos = list.partition_point(|(bd, _)| *bd <= dist);
                    list.insert(pos, (dist, base + j));
                    list.truncate(k);
                }
            }
        }
    }

    fn vote(&self, best: &[(f32, usize)]) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for (_, i) in best {
            counts[self.labels[*i]] += 1;
        }
        let top = *counts.iter().max().expect("at least one class");
        best.iter()
            .map(|(_, i)| self.labels[*i])
            .find(|l| counts[*l] == top)
            .expect("winner among neighbours")
    }
}

/// One-shot convenience over an owned index.
pub fn knn_predict(features: &[f64], labels: &[usize], dim: usize, query: &[f64], k: usize) -> Result<usize> {
    KnnIndex::new(features, labels, dim)?.predict(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_returns_exact_match() {
        let xs = [0.0, 0.0, 5.0, 5.0, 9.0, 1.0];
        let ys = [2, 0, 1];
        assert_eq!(knn_predict(&xs, &ys, 2, &[5.0, 5.0], 1).unwrap(), 0);
        assert_eq!(knn_predict(&xs, &ys, 2, &[9.0, 1.0], 1).unwrap(), 1);
    }

    #[test]
    fn unanimous_neighbours() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).chain([10.0, 11.0]).collect();
        let ys = [3, 3, 3, 3, 3, 1, 1];
        assert_eq!(knn_predict(&xs, &ys, 1, &[0.2], 5).unwrap(), 3);
    }

    #[test]
    fn majority_wins_over_nearest() {
        // Nearest two are `a` (0), next three are `b` (1).
        let xs = [0.1, 0.2, 0.3, 0.4, 0.5, 9.0];
        let ys = [0, 0, 1, 1, 1, 0];
        assert_eq!(knn_predict(&xs, &ys, 1, &[0.0], 5).unwrap(), 1);
    }

    #[test]
    fn tied_vote_goes_to_nearest() {
        let xs = [1.0, -2.0, 3.0, -4.0];
        let ys = [0, 1, 0, 1];
        assert_eq!(knn_predict(&xs, &ys, 1, &[0.0], 4).unwrap(), 0);
        let ys = [1, 0, 1, 0];
        assert_eq!(knn_predict(&xs, &ys, 1, &[0.0], 4).unwrap(), 1);
    }

    #[test]
    fn equal_distances_rank_by_index() {
        let xs = [1.0, -1.0, 1.0];
        let ys = [4, 2, 0];
        assert_eq!(knn_predict(&xs, &ys, 1, &[0.0], 1).unwrap(), 4);
    }

    #[test]
    fn errors() {
        assert!(KnnIndex::new(&[], &[], 2).is_err());
        let idx = KnnIndex::new(&[0.0, 1.0], &[0], 2).unwrap();
        assert!(idx.predict(&[0.0], 1).is_err());
        assert!(idx.predict(&[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn batch_matches_single_queries() {
        let n = 1500;
        let xs: Vec<f64> = (0..n * 3).map(|i| ((i * 7919) % 1000) as f64 / 100.0).collect();
        let ys: Vec<usize> = (0..n).map(|i| (i * 31) % 4).collect();
        let idx = KnnIndex::new(&xs, &ys, 3).unwrap();
        let qs: Vec<f64> = (0..300 * 3).map(|i| ((i * 104729) % 997) as f64 / 99.7).collect();
        let batch = idx.predict_batch(&qs, 5).unwrap();
        for (qi, q) in qs.chunks(3).enumerate() {
            // Plain scan oracle.
            let mut d: Vec<(f64, usize)> = xs
                .chunks(3)
                .enumerate()
                .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| ((*a as f32 - *b as f32) as f64).powi(2)).sum(), i))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut c = [0; 4];
            for (_, i) in &d[..5] {
                c[ys[*i]] += 1;
            }
            let top = *c.iter().max().unwrap();
            let want = d[..5].iter().map(|(_, i)| ys[*i]).find(|l| c[*l] == top).unwrap();
            assert_eq!(batch[qi], want, "query {qi}");
        }
    }
}

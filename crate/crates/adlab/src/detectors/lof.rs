//! Local outlier factor in novelty mode: neighborhoods and reachability
//! densities come from the training set, and test points are scored against
//! them.
//!
//! Determinism rules: neighbor order ties break by row index, and the
//! k-distance neighborhood includes every point at distance <= k-distance
//! (so it can exceed k under ties). Local reachability density is
//! stabilized as 1 / (mean reachability + 1e-10).

use serde::{Deserialize, Serialize};

use super::{euclidean, DetectorError, EmbeddingMatrix};

const LRD_STABILIZER: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LofParams {
    pub k: usize,
}

impl Default for LofParams {
    fn default() -> Self {
        Self { k: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LofModel {
    rows: Vec<Vec<f64>>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

/// Distances from `point` to every row, sorted ascending with ties broken
/// by row index. `skip` excludes one row (self-distance during fit).
fn sorted_distances(
    rows: &[Vec<f64>],
    point: &[f64],
    skip: Option<usize>,
) -> Vec<(f64, usize)> {
    let mut dists: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, row)| (euclidean(point, row), i))
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    dists
}

/// Indices within k-distance, inclusive of ties.
fn neighborhood(sorted: &[(f64, usize)], k: usize) -> (f64, Vec<usize>) {
    let k_dist = sorted[k - 1].0;
    let neighbors = sorted
        .iter()
        .take_while(|(d, _)| *d <= k_dist)
        .map(|&(_, i)| i)
        .collect();
    (k_dist, neighbors)
}

impl LofModel {
    pub fn fit(train: &EmbeddingMatrix, params: &LofParams) -> Result<Self, DetectorError> {
        let n = train.n();
        let k = params.k;
        if k == 0 || k > n.saturating_sub(1) {
            return Err(DetectorError::LofKOutOfRange { k, n });
        }
        let first = train.row(0);
        if train.rows().iter().all(|r| r == first) {
            return Err(DetectorError::Degenerate);
        }
        let rows = train.rows().to_vec();

        let mut k_distance = vec![0.0; n];
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            let sorted = sorted_distances(&rows, &rows[i], Some(i));
            let (kd, nb) = neighborhood(&sorted, k);
            k_distance[i] = kd;
            neighbors[i] = nb;
        }

        let lrd: Vec<f64> = (0..n)
            .map(|i| {
                let reach_sum: f64 = neighbors[i]
                    .iter()
                    .map(|&o| euclidean(&rows[i], &rows[o]).max(k_distance[o]))
                    .sum();
                1.0 / (reach_sum / neighbors[i].len() as f64 + LRD_STABILIZER)
            })
            .collect();

        Ok(Self {
            rows,
            k,
            k_distance,
            lrd,
        })
    }

    pub fn train_dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn score_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|row| self.score_row(row)).collect()
    }

    fn score_row(&self, point: &[f64]) -> f64 {
        let sorted = sorted_distances(&self.rows, point, None);
        let (_, neighbors) = neighborhood(&sorted, self.k);
        let reach_sum: f64 = neighbors
            .iter()
            .map(|&o| euclidean(point, &self.rows[o]).max(self.k_distance[o]))
            .sum();
        let lrd_q = 1.0 / (reach_sum / neighbors.len() as f64 + LRD_STABILIZER);
        let lrd_mean: f64 =
            neighbors.iter().map(|&o| self.lrd[o]).sum::<f64>() / neighbors.len() as f64;
        lrd_mean / lrd_q
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::gaussian_matrix;
    use super::super::EmbeddingMatrix;
    use super::*;

    /// Brute-force oracle: a direct transcription of the LOF definition
    /// with the same tie and stabilizer conventions, kept independent of
    /// the model's precomputed state.
    fn lof_oracle(train: &[Vec<f64>], test: &[Vec<f64>], k: usize) -> Vec<f64> {
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let n = train.len();
        let nn = |p: &[f64], skip: Option<usize>| -> (f64, Vec<usize>) {
            let mut ds: Vec<(f64, usize)> = (0..n)
                .filter(|&i| Some(i) != skip)
                .map(|i| (dist(p, &train[i]), i))
                .collect();
            ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let kd = ds[k - 1].0;
            (kd, ds.iter().filter(|(d, _)| *d <= kd).map(|&(_, i)| i).collect())
        };
        let train_info: Vec<(f64, Vec<usize>)> =
            (0..n).map(|i| nn(&train[i], Some(i))).collect();
        let lrd_of = |p: &[f64], neighbors: &[usize]| -> f64 {
            let s: f64 = neighbors
                .iter()
                .map(|&o| dist(p, &train[o]).max(train_info[o].0))
                .sum();
            1.0 / (s / neighbors.len() as f64 + 1e-10)
        };
        let train_lrd: Vec<f64> = (0..n)
            .map(|i| lrd_of(&train[i], &train_info[i].1))
            .collect();
        test.iter()
            .map(|q| {
                let (_, neighbors) = nn(q, None);
                let lrd_q = lrd_of(q, &neighbors);
                let mean: f64 =
                    neighbors.iter().map(|&o| train_lrd[o]).sum::<f64>() / neighbors.len() as f64;
                mean / lrd_q
            })
            .collect()
    }

    #[test]
    fn matches_oracle_on_random_fixtures() {
        for (n, seed) in [(30usize, 1u64), (60, 2), (100, 3)] {
            let train = gaussian_matrix(n, 4, seed);
            let test = gaussian_matrix(25, 4, seed + 100);
            for k in [2usize, 5, 20] {
                let model = LofModel::fit(&train, &LofParams { k }).unwrap();
                let got = model.score_rows(test.rows());
                let want = lof_oracle(train.rows(), test.rows(), k);
                for (g, w) in got.iter().zip(&want) {
                    assert!(
                        (g - w).abs() <= 1e-9,
                        "n={n} k={k}: {g} vs oracle {w}"
                    );
                }
            }
        }
    }

    fn grid_matrix() -> EmbeddingMatrix {
        let mut rows = Vec::new();
        for x in 0..7 {
            for y in 0..7 {
                rows.push(vec![x as f64, y as f64]);
            }
        }
        EmbeddingMatrix::new(
            (0..rows.len()).map(|i| format!("g{i}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn isolated_point_outscores_grid_interior() {
        let train = grid_matrix();
        let model = LofModel::fit(&train, &LofParams { k: 5 }).unwrap();
        let scores = model.score_rows(&[vec![3.0, 3.0], vec![30.0, 30.0]]);
        assert!(scores[1] > scores[0]);
        assert!(scores[1] > 2.0);
    }

    #[test]
    fn duplicate_of_dense_cluster_point_is_near_one() {
        let train = grid_matrix();
        let model = LofModel::fit(&train, &LofParams { k: 5 }).unwrap();
        let score = model.score_rows(&[vec![3.0, 3.0]])[0];
        assert!((score - 1.0).abs() < 0.1, "LOF {score} not ~1");
        let want = lof_oracle(train.rows(), &[vec![3.0, 3.0]], 5)[0];
        assert!((score - want).abs() <= 1e-9);
    }

    #[test]
    fn k_out_of_range_rejected() {
        let train = gaussian_matrix(10, 2, 42);
        assert!(matches!(
            LofModel::fit(&train, &LofParams { k: 10 }),
            Err(DetectorError::LofKOutOfRange { .. })
        ));
        assert!(matches!(
            LofModel::fit(&train, &LofParams { k: 0 }),
            Err(DetectorError::LofKOutOfRange { .. })
        ));
        let single = EmbeddingMatrix::new(vec!["a".into()], vec![vec![1.0]]).unwrap();
        assert!(LofModel::fit(&single, &LofParams { k: 20 }).is_err());
    }

    #[test]
    fn degenerate_train_rejected() {
        let train = EmbeddingMatrix::new(
            (0..5).map(|i| format!("r{i}")).collect(),
            vec![vec![2.0, 2.0]; 5],
        )
        .unwrap();
        assert!(matches!(
            LofModel::fit(&train, &LofParams { k: 2 }),
            Err(DetectorError::Degenerate)
        ));
    }
}

//! Empirical-cumulative-distribution outlier detection.
//!
//! Per dimension, tail probabilities come from the training ECDF floored at
//! 1/n. Three aggregates are formed (left, right, and skewness-directed) and
//! the final score is their maximum, so both tails are covered regardless of
//! dimension-wise skew.

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcodModel {
    /// Sorted training values per dimension.
    sorted: Vec<Vec<f64>>,
    /// Adjusted Fisher-Pearson sample skewness per dimension.
    skew: Vec<f64>,
    n: usize,
}

impl EcodModel {
    pub fn fit(train: &EmbeddingMatrix) -> Self {
        let d = train.dim();
        let n = train.n();
        let mut sorted = vec![Vec::with_capacity(n); d];
        for row in train.rows() {
            for (j, &v) in row.iter().enumerate() {
                sorted[j].push(v);
            }
        }
        let skew = sorted.iter().map(|col| sample_skewness(col)).collect();
        for col in &mut sorted {
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        Self { sorted, skew, n }
    }

    pub fn train_dim(&self) -> usize {
        self.sorted.len()
    }

    pub fn score_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|row| self.score_row(row)).collect()
    }

    fn score_row(&self, row: &[f64]) -> f64 {
        let n = self.n as f64;
        let floor = 1.0 / n;
        let mut left_sum = 0.0;
        let mut right_sum = 0.0;
        let mut auto_sum = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let col = &self.sorted[j];
            let le = col.partition_point(|&v| v <= x) as f64; // #train <= x
            let ge = (self.n - col.partition_point(|&v| v < x)) as f64; // #train >= x
            let f_left = (le / n).max(floor);
            let f_right = (ge / n).max(floor);
            let o_left = -f_left.ln();
            let o_right = -f_right.ln();
            left_sum += o_left;
            right_sum += o_right;
            auto_sum += if self.skew[j] < 0.0 { o_left } else { o_right };
        }
        left_sum.max(right_sum).max(auto_sum)
    }
}

/// Adjusted Fisher-Pearson sample skewness; 0 for n < 3 or zero variance.
fn sample_skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 3 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let g1 = m3 / m2.powf(1.5);
    g1 * (n * (n - 1.0)).sqrt() / (n - 2.0)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::gaussian_matrix;
    use super::super::EmbeddingMatrix;
    use super::*;

    fn matrix_1d(values: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            (0..values.len()).map(|i| format!("r{i}")).collect(),
            values.iter().map(|&v| vec![v]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn far_tail_point_outscores_interior_point() {
        // Hand evaluation on train {1..9}: for x = 100 the right tail is
        // floored at 1/9 so O_R = ln 9 per the ECDF formula, while x = 5
        // sits at the median with F_L = F_R = 5/9.
        let model = EcodModel::fit(&matrix_1d(&[
            1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0,
        ]));
        let scores = model.score_rows(&[vec![100.0], vec![5.0]]);
        assert!(scores[0] > scores[1]);
        assert!((scores[0] - 9.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn median_scores_below_extremes_on_symmetric_sample() {
        let model = EcodModel::fit(&matrix_1d(&[-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0]));
        let scores = model.score_rows(&[vec![0.0], vec![4.0], vec![-4.0]]);
        assert!(scores[0] < scores[1]);
        assert!(scores[0] < scores[2]);
    }

    #[test]
    fn rank_invariance_under_increasing_transforms() {
        // Strictly increasing per-dimension transforms leave the ECDF ranks
        // unchanged, so the score ordering must be identical. Brute-forced
        // on a 20x3 random fixture.
        let train = gaussian_matrix(20, 3, 42);
        let test = gaussian_matrix(20, 3, 7);
        let transforms: [fn(f64) -> f64; 3] =
            [|x| x.exp(), |x| x.powi(3) + 2.0 * x, |x| 5.0 * x - 1.0];

        let apply = |m: &EmbeddingMatrix| {
            EmbeddingMatrix::new(
                m.ids().to_vec(),
                m.rows()
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .map(|(j, &v)| transforms[j](v))
                            .collect()
                    })
                    .collect(),
            )
            .unwrap()
        };

        let base = EcodModel::fit(&train).score_rows(test.rows());
        let mapped = EcodModel::fit(&apply(&train)).score_rows(apply(&test).rows());

        let order = |scores: &[f64]| {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
            idx
        };
        assert_eq!(order(&base), order(&mapped));
    }

    #[test]
    fn skewness_values() {
        assert_eq!(sample_skewness(&[1.0, 2.0]), 0.0);
        assert_eq!(sample_skewness(&[3.0, 3.0, 3.0, 3.0]), 0.0);
        // Right-skewed sample has positive skewness.
        assert!(sample_skewness(&[1.0, 1.0, 1.0, 1.0, 10.0]) > 0.0);
        assert!(sample_skewness(&[-10.0, 1.0, 1.0, 1.0, 1.0]) < 0.0);
    }
}

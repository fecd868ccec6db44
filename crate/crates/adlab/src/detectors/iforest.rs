//! Isolation forest: anomalies take fewer random splits to isolate.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;

const EULER_MASCHERONI: f64 = 0.577_215_664_9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IForestParams {
    pub n_trees: usize,
    pub subsample: usize,
}

impl Default for IForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IForestModel {
    trees: Vec<Node>,
    /// Subsample size actually used (min(subsample, n)).
    psi: usize,
    train_dim: usize,
}

/// Average unsuccessful-search path length in a BST of m nodes:
/// c(m) = 2 H(m-1) - 2(m-1)/m with H(i) = ln(i) + Euler's constant.
pub fn average_path_length(m: usize) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let m = m as f64;
    2.0 * ((m - 1.0).ln() + EULER_MASCHERONI) - 2.0 * (m - 1.0) / m
}

impl IForestModel {
    pub fn fit(train: &EmbeddingMatrix, params: &IForestParams, seed: u64) -> Self {
        let psi = params.subsample.min(train.n()).max(1);
        let max_depth = (psi as f64).log2().ceil() as usize;
        let trees = (0..params.n_trees)
            .map(|t| {
                // Per-tree derived seed keeps trees independent and the
                // forest reproducible.
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
                let chosen: Vec<usize> = index_sample(&mut rng, train.n(), psi).into_vec();
                let rows: Vec<&[f64]> = chosen.iter().map(|&i| train.row(i)).collect();
                build_node(&rows, train.dim(), 0, max_depth, &mut rng)
            })
            .collect();
        Self {
            trees,
            psi,
            train_dim: train.dim(),
        }
    }

    pub fn train_dim(&self) -> usize {
        self.train_dim
    }

    pub fn score_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let c_psi = average_path_length(self.psi).max(f64::MIN_POSITIVE);
        rows.iter()
            .map(|row| {
                let mean_depth: f64 = self
                    .trees
                    .iter()
                    .map(|tree| path_length(tree, row))
                    .sum::<f64>()
                    / self.trees.len() as f64;
                2.0_f64.powf(-mean_depth / c_psi)
            })
            .collect()
    }
}

fn build_node(
    rows: &[&[f64]],
    dim: usize,
    depth: usize,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> Node {
    if rows.len() <= 1 || depth >= max_depth {
        return Node::Leaf { size: rows.len() };
    }
    // Features with spread in this node's subsample.
    let splittable: Vec<usize> = (0..dim)
        .filter(|&j| {
            let first = rows[0][j];
            rows.iter().any(|r| r[j] != first)
        })
        .collect();
    if splittable.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let feature = splittable[rng.gen_range(0..splittable.len())];
    let (min, max) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, r| {
        (acc.0.min(r[feature]), acc.1.max(r[feature]))
    });
    let value = rng.gen_range(min..max);
    let (left, right): (Vec<&[f64]>, Vec<&[f64]>) =
        rows.iter().partition(|r| r[feature] < value);
    Node::Split {
        feature,
        value,
        left: Box::new(build_node(&left, dim, depth + 1, max_depth, rng)),
        right: Box::new(build_node(&right, dim, depth + 1, max_depth, rng)),
    }
}

fn path_length(node: &Node, row: &[f64]) -> f64 {
    let mut node = node;
    let mut depth = 0.0;
    loop {
        match node {
            Node::Leaf { size } => return depth + average_path_length(*size),
            Node::Split {
                feature,
                value,
                left,
                right,
            } => {
                node = if row[*feature] < *value { left } else { right };
                depth += 1.0;
            }
        }
    }
}

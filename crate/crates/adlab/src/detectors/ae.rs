//! Reconstruction autoencoder scored by per-row mean squared error.
//!
//! Fully connected d -> hidden1 -> hidden2 -> hidden1 -> d with rectified
//! linear activations on the hidden layers and a linear output, trained by
//! mini-batch stochastic gradient descent on the MSE loss. Weights start
//! uniform in +-sqrt(6 / (fan_in + fan_out)) from the run seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorError, EmbeddingMatrix, ScoreVector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeParams {
    pub hidden1: usize,
    pub hidden2: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for AeParams {
    fn default() -> Self {
        Self {
            hidden1: 64,
            hidden2: 32,
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layer {
    /// Row-major weights, shape (outputs, inputs).
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    relu: bool,
}

impl Layer {
    fn new(inputs: usize, outputs: usize, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: (0..outputs)
                .map(|_| (0..inputs).map(|_| rng.gen_range(-bound..bound)).collect())
                .collect(),
            b: vec![0.0; outputs],
            relu,
        }
    }

    fn forward(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        let a = if self.relu {
            z.iter().map(|&v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        (z, a)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeModel {
    layers: Vec<Layer>,
    train_dim: usize,
    /// Full-train MSE before training and after each epoch.
    pub loss_history: Vec<f64>,
}

/// Per-layer gradients in the same shapes as the layer parameters.
struct Gradients {
    w: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

impl AeModel {
    fn init(dim: usize, params: &AeParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Layer::new(dim, params.hidden1, true, &mut rng),
            Layer::new(params.hidden1, params.hidden2, true, &mut rng),
            Layer::new(params.hidden2, params.hidden1, true, &mut rng),
            Layer::new(params.hidden1, dim, false, &mut rng),
        ];
        Self {
            layers,
            train_dim: dim,
            loss_history: Vec::new(),
        }
    }

    pub fn fit(
        train: &EmbeddingMatrix,
        params: &AeParams,
        seed: u64,
    ) -> Result<Self, DetectorError> {
        let mut model = Self::init(train.dim(), params, seed);
        let rows = train.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        model.loss_history.push(model.mean_loss(rows));
        for epoch in 0..params.epochs {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(params.batch_size.max(1)) {
                let batch: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
                let (_, grads) = model.loss_and_gradients(&batch);
                model.apply(&grads, params.learning_rate);
            }
            let loss = model.mean_loss(rows);
            if !loss.is_finite() {
                return Err(DetectorError::Diverged { epoch, loss });
            }
            model.loss_history.push(loss);
        }
        Ok(model)
    }

    pub fn train_dim(&self) -> usize {
        self.train_dim
    }

    fn reconstruct(&self, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a).1;
        }
        a
    }

    fn row_mse(&self, row: &[f64]) -> f64 {
        let out = self.reconstruct(row);
        out.iter()
            .zip(row)
            .map(|(o, x)| (o - x) * (o - x))
            .sum::<f64>()
            / row.len() as f64
    }

    fn mean_loss(&self, rows: &[Vec<f64>]) -> f64 {
        rows.iter().map(|r| self.row_mse(r)).sum::<f64>() / rows.len() as f64
    }

    pub fn score_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.row_mse(r)).collect()
    }

    /// Batch MSE and its analytic gradient via backpropagation. The loss
    /// averages over both batch rows and output dimensions.
    fn loss_and_gradients(&self, batch: &[&[f64]]) -> (f64, Gradients) {
        let mut grads = Gradients {
            w: self
                .layers
                .iter()
                .map(|l| vec![vec![0.0; l.w[0].len()]; l.w.len()])
                .collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        };
        let mut total_loss = 0.0;
        let denom = (batch.len() * self.train_dim) as f64;

        for &row in batch {
            // Forward pass, keeping pre-activations and activations.
            let mut activations: Vec<Vec<f64>> = vec![row.to_vec()];
            let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
            for layer in &self.layers {
                let (z, a) = layer.forward(activations.last().unwrap());
                pre.push(z);
                activations.push(a);
            }
            let output = activations.last().unwrap();
            total_loss += output
                .iter()
                .zip(row)
                .map(|(o, x)| (o - x) * (o - x))
                .sum::<f64>();

            // dL/d(output) for L = sum (o - x)^2 / denom.
            let mut delta: Vec<f64> = output
                .iter()
                .zip(row)
                .map(|(o, x)| 2.0 * (o - x) / denom)
                .collect();
            for (l, layer) in self.layers.iter().enumerate().rev() {
                if layer.relu {
                    for (d, z) in delta.iter_mut().zip(&pre[l]) {
                        if *z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let input = &activations[l];
                for (i, d) in delta.iter().enumerate() {
                    grads.b[l][i] += d;
                    for (j, x) in input.iter().enumerate() {
                        grads.w[l][i][j] += d * x;
                    }
                }
                if l > 0 {
                    delta = (0..input.len())
                        .map(|j| delta.iter().zip(&layer.w).map(|(d, row)| d * row[j]).sum())
                        .collect();
                }
            }
        }
        (total_loss / denom, grads)
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (row, grow) in layer.w.iter_mut().zip(&grads.w[l]) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= lr * g;
                }
            }
            for (b, g) in layer.b.iter_mut().zip(&grads.b[l]) {
                *b -= lr * g;
            }
        }
    }

    // Flat parameter access used by the finite-difference gradient check.

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() * l.w[0].len() + l.b.len())
            .sum()
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            let wn = layer.w.len() * layer.w[0].len();
            if idx < wn {
                let cols = layer.w[0].len();
                return layer.w[idx / cols][idx % cols];
            }
            idx -= wn;
            if idx < layer.b.len() {
                return layer.b[idx];
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for layer in &mut self.layers {
            let cols = layer.w[0].len();
            let wn = layer.w.len() * cols;
            if idx < wn {
                layer.w[idx / cols][idx % cols] = value;
                return;
            }
            idx -= wn;
            if idx < layer.b.len() {
                layer.b[idx] = value;
                return;
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn batch_loss(&self, batch: &[&[f64]]) -> f64 {
        self.loss_and_gradients(batch).0
    }

    /// Analytic gradient flattened in parameter order.
    pub fn gradient_flat(&self, batch: &[&[f64]]) -> Vec<f64> {
        let (_, grads) = self.loss_and_gradients(batch);
        let mut flat = Vec::with_capacity(self.param_count());
        for l in 0..self.layers.len() {
            for row in &grads.w[l] {
                flat.extend_from_slice(row);
            }
            flat.extend_from_slice(&grads.b[l]);
        }
        flat
    }

    /// Freshly initialized, untrained model (the zero-epoch case).
    pub fn untrained(dim: usize, params: &AeParams, seed: u64) -> Self {
        let mut model = Self::init(dim, params, seed);
        model.loss_history.push(f64::NAN);
        model
    }
}

/// Convenience wrapper: fit on the train matrix, score the test matrix.
pub fn ae_fit_score(
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    params: &AeParams,
    seed: u64,
) -> Result<ScoreVector, DetectorError> {
    if test.dim() != train.dim() {
        return Err(DetectorError::DimMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    let model = AeModel::fit(train, params, seed)?;
    Ok(ScoreVector {
        ids: test.ids().to_vec(),
        scores: model.score_rows(test.rows()),
    })
}

/// Central-difference gradient check; returns the maximum relative error
/// over all parameters.
pub fn gradient_check(model: &AeModel, batch: &[&[f64]], eps: f64) -> f64 {
    let analytic = model.gradient_flat(batch);
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.get_param(i);
        probe.set_param(i, original + eps);
        let plus = probe.batch_loss(batch);
        probe.set_param(i, original - eps);
        let minus = probe.batch_loss(batch);
        probe.set_param(i, original);
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

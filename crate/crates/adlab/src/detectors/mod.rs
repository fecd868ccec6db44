//! Classical two-step anomaly detectors over embedding matrices, with a
//! uniform fit/score contract: higher score = more anomalous.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod ae;
pub mod ecod;
pub mod iforest;
pub mod lof;

pub use ae::{ae_fit_score, AeModel, AeParams};
pub use ecod::EcodModel;
pub use iforest::{IForestModel, IForestParams};
pub use lof::{LofModel, LofParams};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("embedding matrix must be non-empty with positive dimension")]
    EmptyMatrix,
    #[error("row {row} has {found} dims, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, dim {dim}")]
    NonFinite { row: usize, dim: usize },
    #[error("matrix has {ids} ids but {rows} rows")]
    IdMismatch { ids: usize, rows: usize },
    #[error("scoring matrix dim {found} does not match train dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("LOF requires k <= n_train - 1 (k = {k}, n = {n})")]
    LofKOutOfRange { k: usize, n: usize },
    #[error("LOF cannot fit on all-identical training rows")]
    Degenerate,
    #[error("autoencoder training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model file {path}: {detail}")]
    Serialization { path: String, detail: String },
}

/// Row-major matrix of embedding vectors with aligned sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, DetectorError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(DetectorError::EmptyMatrix);
        }
        if ids.len() != rows.len() {
            return Err(DetectorError::IdMismatch {
                ids: ids.len(),
                rows: rows.len(),
            });
        }
        let dim = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(DetectorError::RaggedRow {
                    row: i,
                    expected: dim,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DetectorError::NonFinite { row: i, dim: j });
                }
            }
        }
        Ok(Self { ids, rows, dim })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Anomaly scores aligned with the scored matrix's row ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn export_csv(&self, path: &Path) -> Result<(), DetectorError> {
        let mut out = String::from("id,score\n");
        for (id, score) in self.ids.iter().zip(&self.scores) {
            out.push_str(&format!("{id},{score}\n"));
        }
        std::fs::write(path, out).map_err(|e| DetectorError::Serialization {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorKind {
    Ecod,
    IForest,
    Lof,
    Ae,
}

impl std::str::FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ecod" => Ok(Self::Ecod),
            "iforest" => Ok(Self::IForest),
            "lof" => Ok(Self::Lof),
            "ae" => Ok(Self::Ae),
            other => Err(format!("unknown detector {other:?}")),
        }
    }
}

/// Per-kind hyperparameters; defaults follow the canonical literature
/// values and are surfaced as configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DetectorParams {
    #[serde(default)]
    pub iforest: IForestParams,
    #[serde(default)]
    pub lof: LofParams,
    #[serde(default)]
    pub ae: AeParams,
}

/// A trained detector. Immutable after fit; scoring is safe to run
/// concurrently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FittedDetector {
    Ecod(EcodModel),
    IForest(IForestModel),
    Lof(LofModel),
    Ae(AeModel),
}

const MODEL_MAGIC: &[u8] = b"ADLABDET";
const MODEL_VERSION: u8 = 1;

impl FittedDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Self::Ecod(_) => DetectorKind::Ecod,
            Self::IForest(_) => DetectorKind::IForest,
            Self::Lof(_) => DetectorKind::Lof,
            Self::Ae(_) => DetectorKind::Ae,
        }
    }

    pub fn train_dim(&self) -> usize {
        match self {
            Self::Ecod(m) => m.train_dim(),
            Self::IForest(m) => m.train_dim(),
            Self::Lof(m) => m.train_dim(),
            Self::Ae(m) => m.train_dim(),
        }
    }

    pub fn score(&self, matrix: &EmbeddingMatrix) -> Result<ScoreVector, DetectorError> {
        if matrix.dim() != self.train_dim() {
            return Err(DetectorError::DimMismatch {
                expected: self.train_dim(),
                found: matrix.dim(),
            });
        }
        let scores = match self {
            Self::Ecod(m) => m.score_rows(matrix.rows()),
            Self::IForest(m) => m.score_rows(matrix.rows()),
            Self::Lof(m) => m.score_rows(matrix.rows()),
            Self::Ae(m) => m.score_rows(matrix.rows()),
        };
        Ok(ScoreVector {
            ids: matrix.ids().to_vec(),
            scores,
        })
    }

    /// Versioned on-disk format: magic, version byte, JSON payload.
    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        let payload = serde_json::to_vec(self).expect("serializable");
        let mut file = std::fs::File::create(path).map_err(|e| DetectorError::Serialization {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        file.write_all(MODEL_MAGIC)
            .and_then(|_| file.write_all(&[MODEL_VERSION]))
            .and_then(|_| file.write_all(&payload))
            .map_err(|e| DetectorError::Serialization {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let bytes = std::fs::read(path).map_err(|e| DetectorError::Serialization {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let err = |detail: &str| DetectorError::Serialization {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        if bytes.len() < MODEL_MAGIC.len() + 1 || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(err("not a detector model file"));
        }
        if bytes[MODEL_MAGIC.len()] != MODEL_VERSION {
            return Err(err("unsupported model version"));
        }
        serde_json::from_slice(&bytes[MODEL_MAGIC.len() + 1..])
            .map_err(|e| err(&format!("payload: {e}")))
    }
}

/// Trains a detector of the given kind. Deterministic for fixed
/// (train matrix, params, seed).
pub fn fit(
    kind: DetectorKind,
    train: &EmbeddingMatrix,
    params: &DetectorParams,
    seed: u64,
) -> Result<FittedDetector, DetectorError> {
    Ok(match kind {
        DetectorKind::Ecod => FittedDetector::Ecod(EcodModel::fit(train)),
        DetectorKind::IForest => {
            FittedDetector::IForest(IForestModel::fit(train, &params.iforest, seed))
        }
        DetectorKind::Lof => FittedDetector::Lof(LofModel::fit(train, &params.lof)?),
        DetectorKind::Ae => FittedDetector::Ae(AeModel::fit(train, &params.ae, seed)?),
    })
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// n x d matrix of roughly unit Gaussian entries (sum of uniforms).
    pub fn gaussian_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let s: f64 = (0..12).map(|_| rng.gen::<f64>()).sum();
                        s - 6.0
                    })
                    .collect()
            })
            .collect();
        let ids = (0..n).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::new(ids, rows).unwrap()
    }
}

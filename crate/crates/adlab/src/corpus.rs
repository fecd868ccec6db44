//! Loading, validation, splitting, and summarization of benchmark text
//! datasets.
//!
//! Datasets arrive as JSONL files with `{"text", "category"}` records; the
//! binary anomaly label is always derived from the [`DatasetSpec`], never
//! trusted from the file. Text lengths are counted in Unicode scalar values.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {detail}")]
    MalformedLine {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: empty text after trimming")]
    EmptyText { path: String, line: usize },
    #[error("{path}:{line}: category {category:?} not in spec")]
    UnknownCategory {
        path: String,
        line: usize,
        category: String,
    },
    #[error("{path}:{line}: anomaly-category sample {category:?} found in train split")]
    AnomalyInTrain {
        path: String,
        line: usize,
        category: String,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("cannot compute statistics of an empty sample list")]
    EmptyStats,
    #[error("category {category:?} has {available} train samples, fewer than v = {requested}")]
    NotEnoughSamples {
        category: String,
        available: usize,
        requested: usize,
    },
    #[error("declared {field} is {declared} but loaded {actual}")]
    SizeMismatch {
        field: &'static str,
        declared: usize,
        actual: usize,
    },
}

/// One labeled text sample. `label == 1` iff the category equals the
/// dataset's anomaly category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub category: String,
    pub label: u8,
}

/// Dataset identity: normal categories (order drives prompt rendering) and
/// the single anomaly category. Matching is exact and case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub original_task: String,
    pub normal_categories: Vec<String>,
    pub anomaly_category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_test_size: Option<usize>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.normal_categories.is_empty() {
            return Err(CorpusError::InvalidSpec(
                "normal_categories must be non-empty".into(),
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.normal_categories {
            if !seen.insert(c) {
                return Err(CorpusError::InvalidSpec(format!(
                    "duplicate normal category {c:?}"
                )));
            }
        }
        if seen.contains(&self.anomaly_category) {
            return Err(CorpusError::InvalidSpec(format!(
                "anomaly category {:?} also listed as normal",
                self.anomaly_category
            )));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: DatasetSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw)
                .map_err(|e| CorpusError::InvalidSpec(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&raw)
                .map_err(|e| CorpusError::InvalidSpec(format!("{}: {e}", path.display())))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_known_category(&self, category: &str) -> bool {
        category == self.anomaly_category || self.normal_categories.iter().any(|c| c == category)
    }
}

/// A loaded dataset: normal-only train split plus mixed test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn anomaly_ratio(&self) -> f64 {
        if self.test.is_empty() {
            return 0.0;
        }
        let anomalies = self.test.iter().filter(|s| s.label == 1).count();
        anomalies as f64 / self.test.len() as f64
    }
}

/// Character-length statistics over a sample list. `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub avg: f64,
    pub max: usize,
    pub min: usize,
    pub std: f64,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    category: String,
}

fn load_split(
    path: &Path,
    spec: &DatasetSpec,
    split: &str,
    train_only_normal: bool,
) -> Result<Vec<Sample>, CorpusError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                path: display.clone(),
                line: line_no,
                detail: e.to_string(),
            })?;
        if record.text.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                path: display.clone(),
                line: line_no,
            });
        }
        if !spec.is_known_category(&record.category) {
            return Err(CorpusError::UnknownCategory {
                path: display.clone(),
                line: line_no,
                category: record.category,
            });
        }
        let label = u8::from(record.category == spec.anomaly_category);
        if train_only_normal && label == 1 {
            return Err(CorpusError::AnomalyInTrain {
                path: display.clone(),
                line: line_no,
                category: record.category,
            });
        }
        samples.push(Sample {
            id: format!("{split}:{line_no}"),
            text: record.text,
            category: record.category,
            label,
        });
    }
    Ok(samples)
}

/// Load train and test JSONL files, deriving labels from the spec. Sample
/// order follows file order; ids are `<split>:<line>`.
pub fn load_dataset(
    train_path: &Path,
    test_path: &Path,
    spec: &DatasetSpec,
) -> Result<Dataset, CorpusError> {
    spec.validate()?;
    let train = load_split(train_path, spec, "train", true)?;
    let test = load_split(test_path, spec, "test", false)?;
    if let Some(declared) = spec.expected_train_size {
        if declared != train.len() {
            return Err(CorpusError::SizeMismatch {
                field: "train size",
                declared,
                actual: train.len(),
            });
        }
    }
    if let Some(declared) = spec.expected_test_size {
        if declared != test.len() {
            return Err(CorpusError::SizeMismatch {
                field: "test size",
                declared,
                actual: test.len(),
            });
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        train,
        test,
    })
}

/// Character-count statistics (population standard deviation).
pub fn compute_text_stats(samples: &[Sample]) -> Result<TextStats, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyStats);
    }
    let lengths: Vec<usize> = samples.iter().map(|s| s.text.chars().count()).collect();
    let n = lengths.len() as f64;
    let avg = lengths.iter().sum::<usize>() as f64 / n;
    let var = lengths
        .iter()
        .map(|&l| {
            let d = l as f64 - avg;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(TextStats {
        avg,
        max: *lengths.iter().max().unwrap(),
        min: *lengths.iter().min().unwrap(),
        std: var.sqrt(),
    })
}

/// Seeded uniform draw without replacement of `v` train samples per normal
/// category. The test split is returned unchanged.
pub fn sample_small_train(dataset: &Dataset, v: usize, seed: u64) -> Result<Dataset, CorpusError> {
    let mut by_category: HashMap<&str, Vec<&Sample>> = HashMap::new();
    for s in &dataset.train {
        by_category.entry(s.category.as_str()).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(v * dataset.spec.normal_categories.len());
    // Draw in spec order so the result depends only on (dataset, v, seed).
    for category in &dataset.spec.normal_categories {
        let pool = by_category.remove(category.as_str()).unwrap_or_default();
        if pool.len() < v {
            return Err(CorpusError::NotEnoughSamples {
                category: category.clone(),
                available: pool.len(),
                requested: v,
            });
        }
        let mut chosen: Vec<&Sample> = pool
            .choose_multiple(&mut rng, v)
            .copied()
            .collect();
        chosen.sort_by(|a, b| a.id.cmp(&b.id));
        train.extend(chosen.into_iter().cloned());
    }
    Ok(Dataset {
        spec: dataset.spec.clone(),
        train,
        test: dataset.test.clone(),
    })
}

//! Dense text embeddings with a persistent cache.
//!
//! Vectors come from an OpenAI-compatible embeddings endpoint, a fixture
//! directory, or a CSV import. Every (model, text) pair is cached on disk
//! keyed by SHA-256 of `model_id || 0x00 || utf8(text)`, so reruns never
//! re-pay for an embedding.
//!
//! Fixture format: one JSON file per record in a directory, named
//! `<hex key>.json`, containing the vector as a JSON array of numbers.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detectors::EmbeddingMatrix;

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_PARALLELISM: usize = 4;
const DEFAULT_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding transport failed after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("vector for {context} has dim {found}, expected {expected}")]
    DimMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding cache {path} line {line}: {detail}")]
    CacheCorrupt {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("no fixture record for key {key}")]
    FixtureMiss { key: String },
    #[error("non-finite embedding value for {context}")]
    NonFinite { context: String },
    #[error("row {row}: expected {expected} values, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate id {id:?} at row {row}")]
    DuplicateId { id: String, row: usize },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("empty text at position {index}")]
    EmptyText { index: usize },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EmbedError {
    EmbedError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// A single dense embedding; construction enforces finiteness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, context: &str) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite {
                context: context.to_string(),
            });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Cache key: SHA-256 over the exact bytes of model id, a NUL separator,
/// and the text.
pub fn cache_key(model_id: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    vector: Vec<f64>,
}

/// Append-only JSONL cache. Reads share a lock; appends are serialized.
pub struct EmbeddingCache {
    path: PathBuf,
    map: RwLock<HashMap<String, Vec<f64>>>,
    sink: Mutex<std::fs::File>,
}

impl EmbeddingCache {
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let mut map = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine =
                    serde_json::from_str(line).map_err(|e| EmbedError::CacheCorrupt {
                        path: path.display().to_string(),
                        line: i + 1,
                        detail: e.to_string(),
                    })?;
                map.insert(entry.key, entry.vector);
            }
        }
        let sink = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            map: RwLock::new(map),
            sink: Mutex::new(sink),
        })
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: String, vector: Vec<f64>) -> Result<(), EmbedError> {
        let line = serde_json::to_string(&CacheLine {
            key: key.clone(),
            vector: vector.clone(),
        })
        .expect("serializable");
        {
            let mut sink = self.sink.lock().unwrap();
            writeln!(sink, "{line}").map_err(|e| io_err(&self.path, e))?;
        }
        self.map.write().unwrap().insert(key, vector);
        Ok(())
    }
}

/// Source of raw embedding vectors. `calls` counts provider round trips so
/// callers can verify cache hits never reach the provider.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[&str], model_id: &str) -> Result<Vec<Vec<f64>>, EmbedError>;
    fn calls(&self) -> u64;
}

#[derive(Debug, Clone)]
pub struct EmbedConfig {
    pub batch_size: usize,
    pub parallelism: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

/// Embeds `texts` in input order. The cache is consulted before any
/// provider call; misses go out in batches with bounded parallelism and the
/// results are appended to the cache.
pub fn embed_batch(
    texts: &[String],
    model_id: &str,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    config: &EmbedConfig,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    for (i, text) in texts.iter().enumerate() {
        if text.is_empty() {
            return Err(EmbedError::EmptyText { index: i });
        }
    }
    let keys: Vec<String> = texts.iter().map(|t| cache_key(model_id, t)).collect();
    let mut out: Vec<Option<Vec<f64>>> = keys.iter().map(|k| cache.get(k)).collect();

    // First occurrence of each missing key, preserving order.
    let mut miss_indices: Vec<usize> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, slot) in out.iter().enumerate() {
        if slot.is_none() && !seen.contains_key(keys[i].as_str()) {
            seen.insert(&keys[i], i);
            miss_indices.push(i);
        }
    }

    if !miss_indices.is_empty() {
        let chunks: Vec<&[usize]> = miss_indices.chunks(config.batch_size.max(1)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<Vec<Vec<f64>>, EmbedError>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..config.parallelism.max(1).min(chunks.len()) {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::SeqCst);
                    if c >= chunks.len() {
                        break;
                    }
                    let batch: Vec<&str> =
                        chunks[c].iter().map(|&i| texts[i].as_str()).collect();
                    *results[c].lock().unwrap() = Some(provider.embed(&batch, model_id));
                });
            }
        });
        for (c, cell) in results.into_iter().enumerate() {
            let vectors = cell.into_inner().unwrap().expect("chunk processed")?;
            if vectors.len() != chunks[c].len() {
                return Err(EmbedError::Transport {
                    attempts: 1,
                    detail: format!(
                        "provider returned {} vectors for {} texts",
                        vectors.len(),
                        chunks[c].len()
                    ),
                });
            }
            for (&i, vector) in chunks[c].iter().zip(vectors) {
                EmbeddingVector::new(vector.clone(), &keys[i])?;
                cache.insert(keys[i].clone(), vector.clone())?;
                out[i] = Some(vector);
            }
        }
        // Repeated texts that missed share the first occurrence's vector.
        for (i, slot) in out.iter_mut().enumerate() {
            if slot.is_none() {
                *slot = cache.get(&keys[i]);
            }
        }
    }

    let vectors: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled")).collect();
    let dim = vectors[0].len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(EmbedError::DimMismatch {
                context: format!("text {i}"),
                expected: dim,
                found: v.len(),
            });
        }
    }
    vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| EmbeddingVector::new(v, &format!("text {i}")))
        .collect()
}

/// Reads a fixture directory of `<hex key>.json` vector records.
pub struct FixtureProvider {
    dir: PathBuf,
    calls: AtomicU64,
}

impl FixtureProvider {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            calls: AtomicU64::new(0),
        }
    }

    /// Writes one fixture record; used by tests and recording runs.
    pub fn write_record(dir: &Path, key: &str, vector: &[f64]) -> Result<(), EmbedError> {
        let path = dir.join(format!("{key}.json"));
        let body = serde_json::to_string(vector).expect("serializable");
        std::fs::write(&path, body).map_err(|e| io_err(&path, e))
    }
}

impl EmbeddingProvider for FixtureProvider {
    fn embed(&self, texts: &[&str], model_id: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        texts
            .iter()
            .map(|text| {
                let key = cache_key(model_id, text);
                let path = self.dir.join(format!("{key}.json"));
                if !path.exists() {
                    return Err(EmbedError::FixtureMiss { key });
                }
                let body = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                serde_json::from_str(&body).map_err(|e| io_err(&path, e))
            })
            .collect()
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// OpenAI-compatible embeddings endpoint. The bearer token comes from the
/// `ADLAB_API_KEY` environment variable, never from flags or files.
pub struct LiveEmbeddingProvider {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retries: u32,
    calls: AtomicU64,
}

impl LiveEmbeddingProvider {
    pub fn from_env(base_url: impl Into<String>) -> Result<Self, EmbedError> {
        let api_key = std::env::var("ADLAB_API_KEY").map_err(|_| EmbedError::Transport {
            attempts: 0,
            detail: "ADLAB_API_KEY not set".into(),
        })?;
        Ok(Self {
            base_url: base_url.into(),
            api_key,
            client: reqwest::blocking::Client::new(),
            retries: DEFAULT_RETRIES,
            calls: AtomicU64::new(0),
        })
    }

    fn attempt(&self, texts: &[&str], model_id: &str) -> Result<Vec<Vec<f64>>, String> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({ "model": model_id, "input": texts });
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("HTTP {}", response.status()));
        }
        let value: serde_json::Value = response.json().map_err(|e| e.to_string())?;
        let data = value["data"]
            .as_array()
            .ok_or("response missing data array")?;
        let mut vectors = vec![Vec::new(); texts.len()];
        for item in data {
            let index = item["index"].as_u64().ok_or("record missing index")? as usize;
            let embedding = item["embedding"]
                .as_array()
                .ok_or("record missing embedding")?;
            if index >= vectors.len() {
                return Err(format!("index {index} out of range"));
            }
            vectors[index] = embedding
                .iter()
                .map(|v| v.as_f64().ok_or("non-numeric embedding value"))
                .collect::<Result<_, _>>()?;
        }
        Ok(vectors)
    }
}

impl EmbeddingProvider for LiveEmbeddingProvider {
    fn embed(&self, texts: &[&str], model_id: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut detail = String::new();
        for attempt in 0..self.retries {
            match self.attempt(texts, model_id) {
                Ok(vectors) => return Ok(vectors),
                Err(e) => {
                    detail = e;
                    std::thread::sleep(std::time::Duration::from_millis(250 << attempt));
                }
            }
        }
        Err(EmbedError::Transport {
            attempts: self.retries,
            detail,
        })
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// CSV matrix with an `id` column followed by the vector values, one row
/// per sample. Values round-trip bit-exactly (shortest representation).
pub fn export_embeddings(
    path: &Path,
    entries: &BTreeMap<String, EmbeddingVector>,
) -> Result<(), EmbedError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for (id, vector) in entries {
        let mut record = vec![id.clone()];
        record.extend(vector.values().iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

pub fn import_embeddings(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>, EmbedError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        let mut fields = record.iter();
        let id = fields
            .next()
            .ok_or_else(|| io_err(path, format!("row {row}: empty record")))?
            .to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| io_err(path, format!("row {row}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(EmbedError::RaggedRow {
                row,
                expected,
                found: values.len(),
            });
        }
        let vector = EmbeddingVector::new(values, &format!("row {row} (id {id:?})"))?;
        if out.insert(id.clone(), vector).is_some() {
            return Err(EmbedError::DuplicateId { id, row });
        }
    }
    Ok(out)
}

/// Stacks id-aligned vectors into a detector-ready matrix, in `ids` order.
pub fn to_matrix(
    ids: &[String],
    entries: &BTreeMap<String, EmbeddingVector>,
) -> Result<EmbeddingMatrix, EmbedError> {
    let rows: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            entries
                .get(id)
                .map(|v| v.values().to_vec())
                .ok_or_else(|| EmbedError::FixtureMiss { key: id.clone() })
        })
        .collect::<Result<_, _>>()?;
    EmbeddingMatrix::new(ids.to_vec(), rows).map_err(|e| EmbedError::Io {
        path: "<matrix>".into(),
        detail: e.to_string(),
    })
}

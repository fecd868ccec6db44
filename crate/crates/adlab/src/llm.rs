//! Chat-completion provider abstraction with deterministic record/replay
//! and the failure taxonomy used to exclude broken samples from metrics.
//!
//! The replay store is a single JSONL file holding one record per request
//! fingerprint: the SHA-256 of `model_id \0 temperature \0 seed \0 prompt`,
//! with temperature and seed rendered via `Display` (`"none"` for an absent
//! seed). Each record carries the full request snapshot alongside the
//! response so stores can be audited and regenerated.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS_DETECTION: u32 = 1024;
pub const DEFAULT_MAX_TOKENS_KEYWORDS: u32 = 4096;
pub const DEFAULT_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("replay miss for key {key}")]
    ReplayMiss { key: String },
    #[error("replay store {path}: {detail}")]
    Store { path: String, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<i64>,
    pub max_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            seed: Some(42),
            max_tokens: DEFAULT_MAX_TOKENS_DETECTION,
            model_id: model_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Replay fingerprint of this request.
    pub fn key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.temperature.to_string().as_bytes());
        hasher.update([0u8]);
        match self.seed {
            Some(s) => hasher.update(s.to_string().as_bytes()),
            None => hasher.update(b"none"),
        }
        hasher.update([0u8]);
        hasher.update(self.prompt.as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Filtered,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatOutcome {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

/// Why a sample was excluded from metric computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureKind {
    RepetitionLoop,
    SafetyRefusal,
    MalformedOutput,
    Transport,
    FormatViolation,
}

impl FailureKind {
    pub const ALL: [FailureKind; 5] = [
        FailureKind::RepetitionLoop,
        FailureKind::SafetyRefusal,
        FailureKind::MalformedOutput,
        FailureKind::Transport,
        FailureKind::FormatViolation,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmFailure {
    pub kind: FailureKind,
    pub detail: String,
}

impl LlmFailure {
    pub fn new(kind: FailureKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

/// Chat completion backend. Implementations are shareable across threads.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatOutcome, LlmError>;
}

/// True iff some substring of at least `unit_len` characters repeats at
/// least `min_repeats` times consecutively. Defaults (20, 5) mean no string
/// shorter than 100 characters can ever be flagged.
pub fn detect_repetition_loop(text: &str) -> bool {
    detect_repetition_loop_with(text, 20, 5)
}

pub fn detect_repetition_loop_with(text: &str, unit_len: usize, min_repeats: usize) -> bool {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    if n < unit_len * min_repeats {
        return false;
    }
    // A run of length >= (min_repeats - 1) * p of positions i with
    // chars[i] == chars[i + p] is exactly a block periodic with period p
    // spanning min_repeats copies.
    for p in unit_len..=n / min_repeats {
        let needed = (min_repeats - 1) * p;
        let mut run = 0usize;
        for i in 0..n - p {
            if chars[i] == chars[i + p] {
                run += 1;
                if run >= needed {
                    return true;
                }
            } else {
                run = 0;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplayRecord {
    key: String,
    model_id: String,
    temperature: f64,
    seed: Option<i64>,
    prompt: String,
    response: String,
    finish_reason: FinishReason,
}

/// On-disk map from request fingerprints to recorded responses.
#[derive(Debug, Default)]
pub struct ReplayStore {
    records: HashMap<String, ReplayRecord>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path).map_err(|e| LlmError::Store {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut records = HashMap::new();
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord =
                serde_json::from_str(line).map_err(|e| LlmError::Store {
                    path: path.display().to_string(),
                    detail: format!("line {}: {e}", idx + 1),
                })?;
            records.insert(record.key.clone(), record);
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, key: &str) -> Option<(&str, FinishReason)> {
        self.records
            .get(key)
            .map(|r| (r.response.as_str(), r.finish_reason))
    }

    /// Inserts a record; returns true when an existing key was overwritten.
    pub fn insert(
        &mut self,
        request: &ChatRequest,
        response: &str,
        finish_reason: FinishReason,
    ) -> bool {
        let key = request.key();
        let replaced = self.records.contains_key(&key);
        self.records.insert(
            key.clone(),
            ReplayRecord {
                key,
                model_id: request.model_id.clone(),
                temperature: request.temperature,
                seed: request.seed,
                prompt: request.prompt.clone(),
                response: response.to_string(),
                finish_reason,
            },
        );
        replaced
    }

    /// Writes all records, sorted by key for stable files.
    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let mut keys: Vec<&String> = self.records.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            out.push_str(&serde_json::to_string(&self.records[key]).expect("serializable"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| LlmError::Store {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

/// Strict-replay provider: every request must hit the store.
pub struct ReplayProvider {
    store: ReplayStore,
}

impl ReplayProvider {
    pub fn new(store: ReplayStore) -> Self {
        Self { store }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(ReplayStore::load(path)?))
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatOutcome, LlmError> {
        request.validate()?;
        let key = request.key();
        let (text, finish_reason) = self
            .store
            .lookup(&key)
            .ok_or(LlmError::ReplayMiss { key })?;
        Ok(ChatOutcome {
            text: text.to_string(),
            finish_reason,
            latency_ms: 0,
        })
    }
}

/// OpenAI-compatible chat-completions endpoint. The bearer token comes from
/// the `ADLAB_API_KEY` environment variable, never from flags or files.
pub struct LiveProvider {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retries: u32,
}

impl LiveProvider {
    pub fn from_env(base_url: impl Into<String>) -> Result<Self, LlmError> {
        let api_key = std::env::var("ADLAB_API_KEY")
            .map_err(|_| LlmError::InvalidRequest("ADLAB_API_KEY not set".into()))?;
        Ok(Self {
            base_url: base_url.into(),
            api_key,
            client: reqwest::blocking::Client::new(),
            retries: DEFAULT_RETRIES,
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatOutcome, String> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut body = serde_json::json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = serde_json::json!(seed);
        }
        let start = Instant::now();
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
        let choice = &value["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .ok_or("response missing choices[0].message.content")?
            .to_string();
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            Some("content_filter") => FinishReason::Filtered,
            _ => FinishReason::Stop,
        };
        Ok(ChatOutcome {
            text,
            finish_reason,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

impl ChatProvider for LiveProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatOutcome, LlmError> {
        request.validate()?;
        let mut detail = String::new();
        for attempt in 0..self.retries {
            match self.attempt(request) {
                Ok(outcome) => return Ok(outcome),
                Err(e) => {
                    detail = e;
                    std::thread::sleep(std::time::Duration::from_millis(250 << attempt));
                }
            }
        }
        Err(LlmError::Transport {
            attempts: self.retries,
            detail,
        })
    }
}

/// Wraps another provider and appends every outcome to a replay store file.
/// Writes are serialized; re-recording an existing key overwrites it with a
/// warning on stderr.
pub struct RecordingProvider<P: ChatProvider> {
    inner: P,
    path: PathBuf,
    sink: Mutex<std::fs::File>,
    known: Mutex<std::collections::HashSet<String>>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P, path: &Path) -> Result<Self, LlmError> {
        let existing = if path.exists() {
            ReplayStore::load(path)?
        } else {
            ReplayStore::new()
        };
        // Known keys let us warn on overwrite; the file itself stays
        // append-only and the last record for a key wins at load time.
        let sink = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Store {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            sink: Mutex::new(sink),
            known: Mutex::new(existing.records.keys().cloned().collect()),
        })
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatOutcome, LlmError> {
        let outcome = self.inner.complete(request)?;
        let key = request.key();
        {
            let mut known = self.known.lock().unwrap();
            if !known.insert(key.clone()) {
                eprintln!(
                    "warning: overwriting replay record {key} in {}",
                    self.path.display()
                );
            }
        }
        let record = ReplayRecord {
            key,
            model_id: request.model_id.clone(),
            temperature: request.temperature,
            seed: request.seed,
            prompt: request.prompt.clone(),
            response: outcome.text.clone(),
            finish_reason: outcome.finish_reason,
        };
        let mut sink = self.sink.lock().unwrap();
        writeln!(
            sink,
            "{}",
            serde_json::to_string(&record).expect("serializable")
        )
        .map_err(|e| LlmError::Store {
            path: self.path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(outcome)
    }
}

/// Refusal phrases checked when the provider gives no machine signal.
pub const DEFAULT_REFUSAL_PHRASES: [&str; 3] = [
    "I can't assist with that",
    "I cannot assist with that",
    "I'm sorry, but I can't",
];

/// SafetyRefusal is recognized by a provider-flagged `Filtered` finish
/// reason or by a refusal-phrase match.
pub fn is_safety_refusal(outcome: &ChatOutcome, phrases: &[&str]) -> bool {
    outcome.finish_reason == FinishReason::Filtered
        || phrases.iter().any(|p| outcome.text.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> ChatRequest {
        ChatRequest::new("test-model", prompt)
    }

    #[test]
    fn key_is_stable_and_sensitive() {
        let a = request("hello");
        assert_eq!(a.key(), a.key());
        let mut b = request("hello");
        b.temperature = 0.5;
        assert_ne!(a.key(), b.key());
        let mut c = request("hello");
        c.seed = None;
        assert_ne!(a.key(), c.key());
        assert_ne!(a.key(), request("hello!").key());
    }

    #[test]
    fn replay_round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = ReplayStore::new();
        let req = request("what is up");
        store.insert(&req, "not much", FinishReason::Stop);
        store.save(&path).unwrap();

        let provider = ReplayProvider::from_file(&path).unwrap();
        let outcome = provider.complete(&req).unwrap();
        assert_eq!(outcome.text, "not much");

        let miss = provider.complete(&request("unseen"));
        match miss {
            Err(LlmError::ReplayMiss { key }) => assert_eq!(key, request("unseen").key()),
            other => panic!("expected replay miss, got {other:?}"),
        }
    }

    #[test]
    fn replay_store_two_entries_answers_both() {
        let mut store = ReplayStore::new();
        store.insert(&request("a"), "ra", FinishReason::Stop);
        store.insert(&request("b"), "rb", FinishReason::Stop);
        let provider = ReplayProvider::new(store);
        assert_eq!(provider.complete(&request("a")).unwrap().text, "ra");
        assert_eq!(provider.complete(&request("b")).unwrap().text, "rb");
        assert!(provider.complete(&request("c")).is_err());
    }

    #[test]
    fn reinsert_same_key_overwrites() {
        let mut store = ReplayStore::new();
        assert!(!store.insert(&request("a"), "first", FinishReason::Stop));
        assert!(store.insert(&request("a"), "second", FinishReason::Stop));
        assert_eq!(store.len(), 1);
        assert_eq!(store.lookup(&request("a").key()).unwrap().0, "second");
    }

    #[test]
    fn recorder_then_replay_is_byte_exact() {
        struct Echo;
        impl ChatProvider for Echo {
            fn complete(&self, request: &ChatRequest) -> Result<ChatOutcome, LlmError> {
                Ok(ChatOutcome {
                    text: format!("echo: {}", request.prompt),
                    finish_reason: FinishReason::Stop,
                    latency_ms: 1,
                })
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let recorder = RecordingProvider::new(Echo, &path).unwrap();
        let req = request("ping \"quoted\"");
        let live = recorder.complete(&req).unwrap();
        drop(recorder);

        let replay = ReplayProvider::from_file(&path).unwrap();
        assert_eq!(replay.complete(&req).unwrap().text, live.text);
    }

    #[test]
    fn validation_rejects_bad_requests() {
        let mut r = request("x");
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        assert!(request("").validate().is_err());
    }

    #[test]
    fn repetition_loop_on_paper_style_output() {
        let unit = "but the closest is Sports, but it is more closely related \
                    to the category of travel which is not listed, ";
        let text = format!("The text sample is about a tour company. {}", unit.repeat(6));
        assert!(detect_repetition_loop(&text));
    }

    #[test]
    fn no_repetition_on_normal_response() {
        let text = r#"{"reason": "The sample discusses a basketball game and clearly fits the Sports category.", "anomaly_score": 0.05}"#;
        assert!(!detect_repetition_loop(text));
        assert!(!detect_repetition_loop(""));
    }

    #[test]
    fn short_strings_never_flagged() {
        let text = "ababababab".repeat(9);
        let short: String = text.chars().take(99).collect();
        assert!(!detect_repetition_loop(&short));
    }

    #[test]
    fn four_repeats_not_flagged() {
        let unit = "this exact sentence spans more than twenty characters. ";
        assert!(!detect_repetition_loop(&unit.repeat(4)));
        assert!(detect_repetition_loop(&unit.repeat(5)));
    }

    #[test]
    fn safety_refusal_signals() {
        let filtered = ChatOutcome {
            text: String::new(),
            finish_reason: FinishReason::Filtered,
            latency_ms: 0,
        };
        assert!(is_safety_refusal(&filtered, &DEFAULT_REFUSAL_PHRASES));
        let phrase = ChatOutcome {
            text: "I'm sorry, but I can't help with that request.".into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        };
        assert!(is_safety_refusal(&phrase, &DEFAULT_REFUSAL_PHRASES));
        let fine = ChatOutcome {
            text: "all good".into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        };
        assert!(!is_safety_refusal(&fine, &DEFAULT_REFUSAL_PHRASES));
    }
}

//! Run manifests: a TOML config file plus flag overrides, flags winning.
//! Every command writes its resolved manifest next to its outputs so a run
//! can be re-executed (or resumed) from the output directory alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or configuration; exits with code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure during a well-formed run; exits with code 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

pub fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

pub fn run_err(error: impl std::fmt::Display) -> CliError {
    CliError::Run(error.to_string())
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    /// Query the configured endpoint directly.
    Live,
    /// Serve every request from a recorded store; misses are errors.
    #[default]
    Replay,
    /// Query the endpoint and append every outcome to the store.
    Record,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Dataset spec file (TOML or JSON).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    /// Train split JSONL ({"text", "category"} per line).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Test split JSONL.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Model identifier sent with every chat request.
    pub model: String,
    /// Replay/record store path (JSONL, one record per fingerprint).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Endpoint base URL; falls back to ADLAB_BASE_URL. The API key is
    /// never configurable here: it is read from ADLAB_API_KEY only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Replay,
            model: "gpt-4o-mini".into(),
            store: None,
            base_url: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// "normal-only" or "normal-anomaly".
    pub setting: String,
    /// Optional category-description JSON produced by `augment --descriptions-only`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptions: Option<PathBuf>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            setting: "normal-only".into(),
            descriptions: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Keyword groups requested per category per round.
    pub t: usize,
    /// Number of generation rounds (1..=4, prefix of the round schedule).
    pub rounds: usize,
    /// Generate only the category descriptions, no synthetic samples.
    pub descriptions_only: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            t: 50,
            rounds: 4,
            descriptions_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselinesConfig {
    /// Detector names: any of "ecod", "iforest", "lof", "ae".
    pub detectors: Vec<String>,
    /// Training samples drawn per normal category for the small split.
    pub v: usize,
    /// LOF neighborhood size override.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lof_k: Option<usize>,
    /// Synthetic samples JSONL (output of `augment`); when set, detectors
    /// are additionally trained on small-train plus synth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<PathBuf>,
    /// Precomputed embedding CSVs, keyed by sample id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_embeddings: Option<PathBuf>,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            detectors: vec!["ecod".into(), "iforest".into(), "lof".into(), "ae".into()],
            v: 10,
            lof_k: None,
            synth: None,
            train_embeddings: None,
            test_embeddings: None,
            synth_embeddings: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    /// Independent selection queries to aggregate.
    pub n_queries: usize,
    /// Strip all dataset and model context from the prompt.
    pub context_free: bool,
    /// Directory of <slot>.txt abstracts; placeholders when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abstracts: Option<PathBuf>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            n_queries: 5,
            context_free: false,
            abstracts: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub seed: u64,
    pub parallelism: usize,
    /// Output directory; reports and the resolved manifest land here.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub provider: ProviderConfig,
    pub detect: DetectConfig,
    pub augment: AugmentConfig,
    pub baselines: BaselinesConfig,
    pub select: SelectConfig,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            seed: 42,
            parallelism: 4,
            out: None,
            dataset: DatasetConfig::default(),
            provider: ProviderConfig::default(),
            detect: DetectConfig::default(),
            augment: AugmentConfig::default(),
            baselines: BaselinesConfig::default(),
            select: SelectConfig::default(),
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read manifest {}: {e}", path.display())))?;
        toml::from_str(&raw)
            .map_err(|e| usage(format!("invalid manifest {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| usage("no output directory: pass --out or set `out` in the manifest"))
    }

    /// Creates the output directory and writes the resolved manifest into it.
    pub fn prepare_out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out_dir()?.to_path_buf();
        std::fs::create_dir_all(&dir)
            .map_err(|e| run_err(format!("cannot create {}: {e}", dir.display())))?;
        std::fs::write(dir.join("manifest.toml"), self.to_toml())
            .map_err(|e| run_err(format!("cannot write resolved manifest: {e}")))?;
        Ok(dir)
    }
}

/// Flags shared by every subcommand. Each one overrides the corresponding
/// manifest field.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SharedArgs {
    /// Run-manifest TOML file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Dataset spec file (TOML or JSON).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Train split JSONL.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test split JSONL.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Chat provider mode.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderMode>,
    /// Model identifier.
    #[arg(long)]
    pub model: Option<String>,
    /// Replay/record store path.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Prior-knowledge setting: normal-only or normal-anomaly.
    #[arg(long)]
    pub setting: Option<String>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent request budget.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

/// Loads the manifest (or defaults) and applies flag overrides.
pub fn resolve_manifest(shared: &SharedArgs) -> Result<RunManifest, CliError> {
    let mut manifest = match &shared.manifest {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    if let Some(v) = &shared.dataset {
        manifest.dataset.spec = Some(v.clone());
    }
    if let Some(v) = &shared.train {
        manifest.dataset.train = Some(v.clone());
    }
    if let Some(v) = &shared.test {
        manifest.dataset.test = Some(v.clone());
    }
    if let Some(v) = shared.provider {
        manifest.provider.mode = v;
    }
    if let Some(v) = &shared.model {
        manifest.provider.model = v.clone();
    }
    if let Some(v) = &shared.store {
        manifest.provider.store = Some(v.clone());
    }
    if let Some(v) = &shared.setting {
        manifest.detect.setting = v.clone();
    }
    if let Some(v) = shared.seed {
        manifest.seed = v;
    }
    if let Some(v) = &shared.out {
        manifest.out = Some(v.clone());
    }
    if let Some(v) = shared.parallelism {
        manifest.parallelism = v.max(1);
    }
    Ok(manifest)
}

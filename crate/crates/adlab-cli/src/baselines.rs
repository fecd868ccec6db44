//! `adlab baselines`: classical detectors on small vs. augmented training
//! data, compared Figure 2-style with delta cells.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adlab::augment::{build_dataset_with_synth, SynthSample};
use adlab::corpus::{sample_small_train, Dataset};
use adlab::detectors::{fit, DetectorKind, DetectorParams, EmbeddingMatrix};
use adlab::embed::{import_embeddings, to_matrix, EmbeddingVector};
use adlab::eval::{delta_table, emit_report, LabeledScores, MetricPair, ReportFormat};

use crate::manifest::{resolve_manifest, run_err, usage, CliError, SharedArgs};

#[derive(Debug, clap::Args)]
pub struct BaselinesArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Detector to run (repeatable); defaults to all four.
    #[arg(long = "detector")]
    pub detectors: Vec<String>,
    /// Training samples per normal category for the small split.
    #[arg(long)]
    pub v: Option<usize>,
    /// Synthetic samples JSONL to augment the training split with.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    /// Embedding CSVs (id,value,...) keyed by sample id.
    #[arg(long)]
    pub train_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub test_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub synth_embeddings: Option<PathBuf>,
}

fn embeddings(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>, CliError> {
    if !path.exists() {
        return Err(usage(format!(
            "embedding file {} does not exist",
            path.display()
        )));
    }
    import_embeddings(path).map_err(run_err)
}

fn score_pair(
    kind: DetectorKind,
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    labels: &[u8],
    params: &DetectorParams,
    seed: u64,
) -> Result<MetricPair, CliError> {
    let model = fit(kind, train, params, seed).map_err(run_err)?;
    let scored = model.score(test).map_err(run_err)?;
    let data = LabeledScores::new(scored.scores, labels.to_vec()).map_err(run_err)?;
    MetricPair::compute(&data).map_err(run_err)
}

fn train_matrix(
    dataset: &Dataset,
    base: &BTreeMap<String, EmbeddingVector>,
    synth: Option<&BTreeMap<String, EmbeddingVector>>,
) -> Result<EmbeddingMatrix, CliError> {
    let ids: Vec<String> = dataset.train.iter().map(|s| s.id.clone()).collect();
    let mut merged = base.clone();
    if let Some(extra) = synth {
        merged.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    to_matrix(&ids, &merged).map_err(run_err)
}

pub fn cmd_baselines(args: &BaselinesArgs) -> Result<(), CliError> {
    let mut manifest = resolve_manifest(&args.shared)?;
    if !args.detectors.is_empty() {
        manifest.baselines.detectors = args.detectors.clone();
    }
    if let Some(v) = args.v {
        manifest.baselines.v = v;
    }
    for (flag, field) in [
        (&args.synth, &mut manifest.baselines.synth),
        (&args.train_embeddings, &mut manifest.baselines.train_embeddings),
        (&args.test_embeddings, &mut manifest.baselines.test_embeddings),
        (&args.synth_embeddings, &mut manifest.baselines.synth_embeddings),
    ] {
        if let Some(path) = flag {
            *field = Some(path.clone());
        }
    }

    let kinds: Vec<(String, DetectorKind)> = manifest
        .baselines
        .detectors
        .iter()
        .map(|name| {
            name.parse::<DetectorKind>()
                .map(|kind| (name.clone(), kind))
                .map_err(usage)
        })
        .collect::<Result<_, _>>()?;
    if kinds.is_empty() {
        return Err(usage("no detectors selected"));
    }

    let dataset = crate::provider::load_configured_dataset(&manifest)?;
    let small = sample_small_train(&dataset, manifest.baselines.v, manifest.seed)
        .map_err(run_err)?;

    let train_path = manifest
        .baselines
        .train_embeddings
        .as_deref()
        .ok_or_else(|| usage("baselines need --train-embeddings"))?;
    let test_path = manifest
        .baselines
        .test_embeddings
        .as_deref()
        .ok_or_else(|| usage("baselines need --test-embeddings"))?;
    let train_vectors = embeddings(train_path)?;
    let test_vectors = embeddings(test_path)?;
    let test_ids: Vec<String> = dataset.test.iter().map(|s| s.id.clone()).collect();
    let test_matrix = to_matrix(&test_ids, &test_vectors).map_err(run_err)?;
    let labels: Vec<u8> = dataset.test.iter().map(|s| s.label).collect();

    let mut params = DetectorParams::default();
    if let Some(k) = manifest.baselines.lof_k {
        params.lof.k = k;
    }

    let augmented = match &manifest.baselines.synth {
        Some(path) => {
            if !path.exists() {
                return Err(usage(format!(
                    "synth file {} does not exist",
                    path.display()
                )));
            }
            let raw = std::fs::read_to_string(path).map_err(run_err)?;
            let samples: Vec<SynthSample> = raw
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .map_err(run_err)?;
            let synth_path = manifest
                .baselines
                .synth_embeddings
                .as_deref()
                .ok_or_else(|| usage("baselines with synth need --synth-embeddings"))?;
            let vectors = embeddings(synth_path)?;
            let d_da = build_dataset_with_synth(&small, &samples).map_err(run_err)?;
            Some((d_da, vectors))
        }
        None => None,
    };

    let small_matrix = train_matrix(&small, &train_vectors, None)?;
    let mut rows: Vec<(String, MetricPair)> = Vec::new();
    let mut small_results = BTreeMap::new();
    let mut augmented_results = BTreeMap::new();
    for (name, kind) in &kinds {
        let pair = score_pair(*kind, &small_matrix, &test_matrix, &labels, &params, manifest.seed)?;
        small_results.insert(name.clone(), pair);
        rows.push((name.clone(), pair));
        if let Some((d_da, synth_vectors)) = &augmented {
            let da_matrix = train_matrix(d_da, &train_vectors, Some(synth_vectors))?;
            let pair =
                score_pair(*kind, &da_matrix, &test_matrix, &labels, &params, manifest.seed)?;
            augmented_results.insert(name.clone(), pair);
            rows.push((format!("{name}+synth"), pair));
        }
    }

    let out_dir = manifest.prepare_out_dir()?;
    emit_report(&rows, ReportFormat::Csv, &out_dir.join("metrics.csv")).map_err(run_err)?;
    if !augmented_results.is_empty() {
        let deltas = delta_table(&augmented_results, &small_results).map_err(run_err)?;
        let json = serde_json::to_string_pretty(&deltas).expect("serializable");
        std::fs::write(out_dir.join("deltas.json"), json + "\n").map_err(run_err)?;
    }

    for (name, pair) in &rows {
        println!("baselines: {name} AUROC {:.4} AUPRC {:.4}", pair.auroc, pair.auprc);
    }
    Ok(())
}

//! `adlab detect`: zero-shot anomaly detection over the test split.

use std::path::PathBuf;

use adlab::augment::{enrich_context, CategoryDescription};
use adlab::eval::{emit_report, LabeledScores, MetricPair, ReportFormat};
use adlab::zeroshot::{run_zero_shot, DetectionSetting, PromptContext, RunConfig};

use crate::manifest::{resolve_manifest, run_err, usage, CliError, SharedArgs};
use crate::provider::{build_provider, load_configured_dataset};

#[derive(Debug, clap::Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Category-description JSON to enrich the prompt with.
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
}

pub fn cmd_detect(args: &DetectArgs) -> Result<(), CliError> {
    let mut manifest = resolve_manifest(&args.shared)?;
    if let Some(path) = &args.descriptions {
        manifest.detect.descriptions = Some(path.clone());
    }

    let setting: DetectionSetting = manifest
        .detect
        .setting
        .parse()
        .map_err(|e: String| usage(e))?;
    let spec = crate::provider::load_spec(&manifest)?;
    if setting == DetectionSetting::NormalPlusAnomaly && spec.anomaly_category.trim().is_empty() {
        return Err(usage(
            "--setting normal-anomaly requires a dataset spec with an anomaly category",
        ));
    }
    let dataset = load_configured_dataset(&manifest)?;

    let anomaly = match setting {
        DetectionSetting::NormalOnly => None,
        DetectionSetting::NormalPlusAnomaly => Some(dataset.spec.anomaly_category.as_str()),
    };
    let mut ctx = PromptContext::from_names(&dataset.spec.normal_categories, anomaly);
    if let Some(path) = &manifest.detect.descriptions {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read descriptions {}: {e}", path.display())))?;
        let descriptions: Vec<CategoryDescription> = serde_json::from_str(&raw)
            .map_err(|e| usage(format!("invalid descriptions {}: {e}", path.display())))?;
        ctx = enrich_context(&ctx, &descriptions).map_err(run_err)?;
    }

    let out_dir = manifest.prepare_out_dir()?;
    let provider = build_provider(&manifest.provider)?;
    let config = RunConfig {
        temperature: 0.0,
        seed: Some(manifest.seed as i64),
        parallelism: manifest.parallelism,
        records_path: Some(out_dir.join("records.jsonl")),
        ..RunConfig::new(manifest.provider.model.clone())
    };
    let run = run_zero_shot(&dataset, &ctx, setting, provider.as_ref(), &config)
        .map_err(run_err)?;

    let (scores, labels) = run.scored(&dataset);
    let data = LabeledScores::new(scores, labels).map_err(run_err)?;
    let pair = MetricPair::compute(&data).map_err(run_err)?;
    emit_report(
        &[(dataset.spec.name.clone(), pair)],
        ReportFormat::Csv,
        &out_dir.join("metrics.csv"),
    )
    .map_err(run_err)?;
    let counts = serde_json::to_string_pretty(&run.error_counts).expect("serializable");
    std::fs::write(out_dir.join("error_counts.json"), counts + "\n").map_err(run_err)?;

    let failures = run.records.iter().filter(|r| r.is_failure()).count();
    println!(
        "detect: {} samples, {} failures, AUROC {:.4}, AUPRC {:.4}",
        run.records.len(),
        failures,
        pair.auroc,
        pair.auprc
    );
    Ok(())
}

//! `adlab select`: LLM-driven unsupervised model selection.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use adlab::corpus::compute_text_stats;
use adlab::modelsel::{
    aggregate_choices, evaluate_selection, run_model_selection, AbstractSet, ModelChoice,
    SelectionConfig, UmsContext,
};

use crate::manifest::{resolve_manifest, run_err, usage, CliError, SharedArgs};
use crate::provider::{build_provider, load_configured_dataset};

#[derive(Debug, clap::Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Independent selection queries to aggregate.
    #[arg(long)]
    pub n_queries: Option<usize>,
    /// Strip all dataset and model context from the prompt.
    #[arg(long)]
    pub no_context: bool,
    /// Directory of <slot>.txt model abstracts.
    #[arg(long)]
    pub abstracts: Option<PathBuf>,
}

#[derive(Serialize)]
struct SelectionReport {
    choices: Vec<ModelChoice>,
    failures: Vec<(usize, String)>,
    counts: std::collections::BTreeMap<String, usize>,
    top: Vec<(String, usize)>,
    /// Mean (AUROC, AUPRC) of the chosen methods on this dataset, when the
    /// dataset is covered by the bundled baseline table.
    evaluation: Option<(f64, f64)>,
}

pub fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let mut manifest = resolve_manifest(&args.shared)?;
    if let Some(n) = args.n_queries {
        manifest.select.n_queries = n;
    }
    if args.no_context {
        manifest.select.context_free = true;
    }
    if let Some(path) = &args.abstracts {
        manifest.select.abstracts = Some(path.clone());
    }
    if manifest.select.n_queries == 0 {
        return Err(usage("n_queries must be at least 1"));
    }

    let dataset = load_configured_dataset(&manifest)?;
    let normal_example = dataset
        .test
        .iter()
        .find(|s| s.label == 0)
        .ok_or_else(|| usage("dataset has no normal test samples"))?
        .clone();
    let anomaly_example = dataset
        .test
        .iter()
        .find(|s| s.label == 1)
        .ok_or_else(|| usage("dataset has no anomalous test samples"))?
        .clone();
    let abstracts = match &manifest.select.abstracts {
        Some(dir) => AbstractSet::from_dir(dir).map_err(|e| usage(e.to_string()))?,
        None => AbstractSet::placeholders(),
    };
    let ctx = UmsContext {
        spec: dataset.spec.clone(),
        size: dataset.test.len(),
        stats: compute_text_stats(&dataset.test).map_err(run_err)?,
        normal_example,
        anomaly_example,
        abstracts,
    };

    let out_dir = manifest.prepare_out_dir()?;
    let provider = build_provider(&manifest.provider)?;
    let config = SelectionConfig {
        n_queries: manifest.select.n_queries,
        base_seed: manifest.seed as i64,
        context_free: manifest.select.context_free,
        ..SelectionConfig::new(manifest.provider.model.clone())
    };
    let run = run_model_selection(&ctx, provider.as_ref(), &config).map_err(run_err)?;
    if run.choices.is_empty() {
        return Err(run_err("every selection query failed to parse"));
    }

    let aggregate = aggregate_choices(&run.choices);
    let top = aggregate.top(2);
    let evaluation = evaluate_selection(&run.choices, &dataset.spec.name).ok();
    let report = SelectionReport {
        choices: run.choices,
        failures: run.failures,
        counts: aggregate.counts.clone(),
        top: top.clone(),
        evaluation,
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable");
    std::fs::write(out_dir.join("selection.json"), json + "\n").map_err(run_err)?;

    let mut md = String::from("| Rank | Model | Votes |\n|---|---|---|\n");
    for (rank, (model, votes)) in aggregate.ranked().iter().enumerate() {
        let _ = writeln!(md, "| {} | {} | {} |", rank + 1, model, votes);
    }
    if let Some((auroc, auprc)) = evaluation {
        let _ = writeln!(md, "\nSelected-method mean: AUROC {auroc:.4}, AUPRC {auprc:.4}");
    }
    std::fs::write(out_dir.join("selection.md"), md).map_err(run_err)?;

    for (model, votes) in &top {
        println!(
            "select: {model} ({votes}/{} votes)",
            report.choices.len()
        );
    }
    Ok(())
}

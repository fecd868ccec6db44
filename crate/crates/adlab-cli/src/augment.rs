//! `adlab augment`: synthetic sample generation and category descriptions.

use serde::Serialize;

use adlab::augment::{
    build_description_prompt, paper_round_schedule, parse_descriptions, run_synth_rounds,
    SynthConfig, SynthRun, DESCRIPTION_TEMPERATURE,
};
use adlab::llm::{ChatRequest, DEFAULT_MAX_TOKENS_DETECTION};

use crate::manifest::{resolve_manifest, run_err, usage, CliError, SharedArgs};
use crate::provider::{build_provider, load_spec};

#[derive(Debug, clap::Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Keyword groups per category per round.
    #[arg(long)]
    pub t: Option<usize>,
    /// Number of generation rounds (1..=4).
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Generate category descriptions only.
    #[arg(long)]
    pub descriptions_only: bool,
}

#[derive(Serialize)]
struct SynthSummary {
    samples: usize,
    duplicates_removed: usize,
    shortfalls: Vec<(usize, String, usize)>,
    rounds: Vec<(f64, i64)>,
}

pub fn cmd_augment(args: &AugmentArgs) -> Result<(), CliError> {
    let mut manifest = resolve_manifest(&args.shared)?;
    if let Some(t) = args.t {
        manifest.augment.t = t;
    }
    if let Some(rounds) = args.rounds {
        manifest.augment.rounds = rounds;
    }
    if args.descriptions_only {
        manifest.augment.descriptions_only = true;
    }

    let spec = load_spec(&manifest)?;
    let out_dir = manifest.prepare_out_dir()?;

    if manifest.augment.descriptions_only {
        let provider = build_provider(&manifest.provider)?;
        let request = ChatRequest {
            prompt: build_description_prompt(&spec),
            temperature: DESCRIPTION_TEMPERATURE,
            seed: Some(manifest.seed as i64),
            max_tokens: DEFAULT_MAX_TOKENS_DETECTION,
            model_id: manifest.provider.model.clone(),
        };
        let outcome = provider.complete(&request).map_err(run_err)?;
        let descriptions = parse_descriptions(&outcome.text, &spec).map_err(run_err)?;
        let json = serde_json::to_string_pretty(&descriptions).expect("serializable");
        std::fs::write(out_dir.join("descriptions.json"), json + "\n").map_err(run_err)?;
        println!("augment: wrote {} category descriptions", descriptions.len());
        return Ok(());
    }

    let schedule = paper_round_schedule();
    if manifest.augment.rounds == 0 || manifest.augment.rounds > schedule.len() {
        return Err(usage(format!(
            "rounds must be between 1 and {}",
            schedule.len()
        )));
    }
    let rounds = &schedule[..manifest.augment.rounds];

    let synth_path = out_dir.join("synth.jsonl");
    let summary_path = out_dir.join("synth_summary.json");
    if synth_path.exists() && summary_path.exists() {
        // Completed run: nothing left to generate.
        let lines = std::fs::read_to_string(&synth_path)
            .map_err(run_err)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .count();
        println!("augment: {lines} synthetic samples already present, skipping");
        return Ok(());
    }

    let provider = build_provider(&manifest.provider)?;
    let partial = out_dir.join("synth.partial.jsonl");
    if partial.exists() {
        // Under replay/record every finished request is already in the
        // store, so restarting the round is cheap and keeps ids contiguous.
        std::fs::remove_file(&partial).map_err(run_err)?;
    }
    let config = SynthConfig {
        parallelism: manifest.parallelism,
        sink: Some(partial.clone()),
        ..SynthConfig::new(manifest.provider.model.clone())
    };
    let run: SynthRun =
        run_synth_rounds(&spec, manifest.augment.t, rounds, provider.as_ref(), &config)
            .map_err(run_err)?;

    if partial.exists() {
        std::fs::rename(&partial, &synth_path).map_err(run_err)?;
    } else {
        std::fs::write(&synth_path, "").map_err(run_err)?;
    }
    let summary = SynthSummary {
        samples: run.samples.len(),
        duplicates_removed: run.duplicates_removed,
        shortfalls: run.shortfalls.clone(),
        rounds: rounds.iter().map(|r| (r.temperature, r.seed)).collect(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable");
    std::fs::write(&summary_path, json + "\n").map_err(run_err)?;

    println!(
        "augment: {} synthetic samples over {} rounds ({} duplicates removed)",
        run.samples.len(),
        rounds.len(),
        run.duplicates_removed
    );
    Ok(())
}

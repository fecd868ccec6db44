//! `adlab report`: merge two runs' metrics into a delta comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adlab::eval::{delta_table, DeltaCell, DeltaColor, MetricPair};

use crate::manifest::{run_err, usage, CliError};

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Baseline run metrics CSV.
    pub baseline: PathBuf,
    /// Comparison run metrics CSV.
    pub new: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn read_metrics(path: &Path) -> Result<BTreeMap<String, MetricPair>, CliError> {
    if !path.exists() {
        return Err(usage(format!("metrics file {} does not exist", path.display())));
    }
    let raw = std::fs::read_to_string(path).map_err(run_err)?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("dataset,auroc,auprc") => {}
        other => {
            return Err(usage(format!(
                "{}: expected metrics CSV header, found {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    let mut map = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, ',').collect();
        let parsed = (|| -> Option<(String, MetricPair)> {
            let auroc = fields.get(1)?.parse().ok()?;
            let auprc = fields.get(2)?.parse().ok()?;
            Some((fields[0].to_string(), MetricPair { auroc, auprc }))
        })();
        let (name, pair) = parsed.ok_or_else(|| {
            usage(format!("{}: malformed row {}", path.display(), idx + 2))
        })?;
        map.insert(name, pair);
    }
    Ok(map)
}

fn cell(c: &DeltaCell) -> String {
    let marker = match c.color {
        DeltaColor::Green => " (green)",
        DeltaColor::Red => " (red)",
        DeltaColor::None => "",
    };
    format!("{:.4} ({:+.4}{marker})", c.value, c.delta)
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let baseline = read_metrics(&args.baseline)?;
    let new = read_metrics(&args.new)?;

    let common: Vec<String> = new
        .keys()
        .filter(|k| baseline.contains_key(*k))
        .cloned()
        .collect();
    if common.is_empty() {
        return Err(usage("the two runs share no datasets"));
    }
    let restrict = |m: &BTreeMap<String, MetricPair>| -> BTreeMap<String, MetricPair> {
        common.iter().map(|k| (k.clone(), m[k])).collect()
    };
    let deltas = delta_table(&restrict(&new), &restrict(&baseline)).map_err(run_err)?;

    std::fs::create_dir_all(&args.out).map_err(run_err)?;
    let mut md = String::from("| Dataset | AUROC | AUPRC |\n|---|---|---|\n");
    for (name, pair) in &deltas {
        let _ = writeln!(md, "| {} | {} | {} |", name, cell(&pair.auroc), cell(&pair.auprc));
    }
    std::fs::write(args.out.join("report.md"), &md).map_err(run_err)?;
    let json = serde_json::to_string_pretty(&deltas).expect("serializable");
    std::fs::write(args.out.join("report.json"), json + "\n").map_err(run_err)?;

    println!("report: {} datasets compared", deltas.len());
    Ok(())
}

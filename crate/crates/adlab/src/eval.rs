//! Ranking metrics (AUROC, AUPRC), delta tables, and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric requires at least one positive and one negative label")]
    SingleClass,
    #[error("labels must be 0 or 1, found {0}")]
    BadLabel(u8),
    #[error("key sets differ between tables: {0}")]
    KeyMismatch(String),
    #[error("empty results")]
    Empty,
    #[error("write failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Scores aligned with binary labels (1 = anomaly).
#[derive(Debug, Clone)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(EvalError::BadLabel(bad));
        }
        Ok(Self { scores, labels })
    }

    fn class_counts(&self) -> Result<(usize, usize), EvalError> {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(EvalError::SingleClass);
        }
        Ok((pos, neg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub auroc: f64,
    pub auprc: f64,
}

impl MetricPair {
    pub fn compute(data: &LabeledScores) -> Result<Self, EvalError> {
        Ok(Self {
            auroc: auroc(data)?,
            auprc: auprc(data)?,
        })
    }
}

/// AUROC via the rank-statistic formulation with average ranks for ties:
/// (sum of positive ranks - n+(n+1)/2) / (n+ * n-).
pub fn auroc(data: &LabeledScores) -> Result<f64, EvalError> {
    let (pos, neg) = data.class_counts()?;
    let n = data.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.scores[a].partial_cmp(&data.scores[b]).unwrap());

    // Average rank within each tied block (ranks are 1-based).
    let mut ranks = vec![0.0_f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && data.scores[order[j + 1]] == data.scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let rank_sum: f64 = (0..n).filter(|&i| data.labels[i] == 1).map(|i| ranks[i]).sum();
    let pos = pos as f64;
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

/// AUPRC as average precision: sweep distinct score thresholds in descending
/// order and accumulate precision weighted by the recall increment of each
/// tied block.
pub fn auprc(data: &LabeledScores) -> Result<f64, EvalError> {
    let (pos, _) = data.class_counts()?;
    let n = data.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.scores[b].partial_cmp(&data.scores[a]).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && data.scores[order[j + 1]] == data.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if data.labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaColor {
    Green,
    Red,
    None,
}

/// One cell of a delta table: new value, change vs. baseline, and the
/// coloring under the |delta| >= 0.03 visibility rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub value: f64,
    pub delta: f64,
    pub color: DeltaColor,
}

impl DeltaCell {
    pub fn new(value: f64, baseline: f64) -> Self {
        let delta = value - baseline;
        let color = if delta >= 0.03 {
            DeltaColor::Green
        } else if delta <= -0.03 {
            DeltaColor::Red
        } else {
            DeltaColor::None
        };
        Self { value, delta, color }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPair {
    pub auroc: DeltaCell,
    pub auprc: DeltaCell,
}

/// Per-key deltas of `new` against `baseline`. Key sets must match exactly.
pub fn delta_table(
    new: &BTreeMap<String, MetricPair>,
    baseline: &BTreeMap<String, MetricPair>,
) -> Result<BTreeMap<String, DeltaPair>, EvalError> {
    let missing: Vec<&String> = new
        .keys()
        .filter(|k| !baseline.contains_key(*k))
        .chain(baseline.keys().filter(|k| !new.contains_key(*k)))
        .collect();
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|s| s.to_string()).collect();
        return Err(EvalError::KeyMismatch(names.join(", ")));
    }
    Ok(new
        .iter()
        .map(|(k, m)| {
            let b = &baseline[k];
            (
                k.clone(),
                DeltaPair {
                    auroc: DeltaCell::new(m.auroc, b.auroc),
                    auprc: DeltaCell::new(m.auprc, b.auprc),
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

/// Write a results table with one row per dataset and AUROC/AUPRC column
/// pairs. Row order follows the input order.
pub fn emit_report(
    results: &[(String, MetricPair)],
    format: ReportFormat,
    path: &Path,
) -> Result<(), EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let out = match format {
        ReportFormat::Markdown => {
            let mut s = String::from("| Dataset | AUROC | AUPRC |\n|---|---|---|\n");
            for (name, m) in results {
                let _ = writeln!(s, "| {} | {:.4} | {:.4} |", name, m.auroc, m.auprc);
            }
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("dataset,auroc,auprc\n");
            for (name, m) in results {
                let _ = writeln!(s, "{},{:.6},{:.6}", name, m.auroc, m.auprc);
            }
            s
        }
        ReportFormat::Json => {
            let map: Vec<serde_json::Value> = results
                .iter()
                .map(|(name, m)| {
                    serde_json::json!({"dataset": name, "auroc": m.auroc, "auprc": m.auprc})
                })
                .collect();
            serde_json::to_string_pretty(&map).expect("serializable") + "\n"
        }
    };
    std::fs::write(path, out)?;
    Ok(())
}

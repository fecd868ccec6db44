//! Unsupervised model selection: ask a reasoning model to pick a
//! (embedding, detector) pair for a dataset, aggregate repeated queries,
//! and score the picks against the bundled baseline results table.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetSpec, Sample, TextStats};
use crate::jsonx::first_json_object;
use crate::llm::{ChatProvider, ChatRequest, LlmError};

/// The sixteen selectable options, in the order the prompt lists them.
pub const CANONICAL_OPTIONS: [&str; 16] = [
    "BERT+AE",
    "BERT+DeepSVDD",
    "BERT+ECOD",
    "BERT+iForest",
    "BERT+LOF",
    "BERT+LUNAR",
    "BERT+SO-GAAL",
    "BERT+VAE",
    "OpenAI+AE",
    "OpenAI+DeepSVDD",
    "OpenAI+ECOD",
    "OpenAI+iForest",
    "OpenAI+LOF",
    "OpenAI+LUNAR",
    "OpenAI+SO-GAAL",
    "OpenAI+VAE",
];

/// Abstract slots referenced by the prompt: eight detectors, then the two
/// embedding backbones.
pub const ABSTRACT_SLOTS: [&str; 10] = [
    "AE", "DeepSVDD", "ECOD", "IForest", "LOF", "LUNAR", "SO-GAAL", "VAE", "BERT", "OpenAI",
];

/// Selection prompt. Dataset slots come from the spec and text statistics;
/// `{abstract_<slot>}` slots are filled from an [`AbstractSet`]. The option
/// list in rule 1 is kept verbatim, including the template's original
/// "Availabel" spelling.
pub const UMS_TEMPLATE: &str = r#"You are an expert in model selection for anomaly detection on text datasets.

## Task:
- Given the information of a dataset and a set of models, select the model you believe will achieve the best performance for detecting anomalies in this dataset. Provide a brief explanation of your choice.

## Dataset Information:
- Dataset Name: {name}
- Dataset Size: {size}
- Background: This dataset is originally for {original_task}.
- Data Structure: Textual data with multiple categories. One category is considered anomalous, while the others are normal.
    - Normal Category(ies): {normal_categories}
        - An Example: {normal_text}
    - Anomaly Category: {anomaly_category}
        - An Example: {anomaly_text}
-  Text Length Statistics:
    - Average Length: {avg_len}
    - Maximum Length: {max_len}
    - Minimum Length: {min_len}
    - Standard Deviation: {std_len}

## Model Information:
- Models utilize language models to generate embeddings and feed the embeddings into the models.
- We provide the abstracts of the papers that introduce the models for your reference.
### Model Options:
- AutoEncoder (AE): {abstract_AE}
- Deep Support Vector Data Description (DeepSVDD): {abstract_DeepSVDD}
- Empirical-Cumulative-Distribution-Based Outlier Detection (ECOD):{abstract_ECOD}
- Isolation Forest (IForest): {abstract_IForest}
- Local Outlier Factor (LOF): {abstract_LOF}
- Unifying Local Outlier Detection Methods via Graph Neural Networks (LUNAR): {abstract_LUNAR}
- Single-Objective Generative Adversarial Active Learning (SO-GAAL): {abstract_SO-GAAL}
- Variational AutoEncoder (VAE): {abstract_VAE}
### Embedding Options:
- Bidirectional Encoder Representations from Transformers (BERT): {abstract_BERT}
- "text-embedding-3-large" from OpenAI (referred to as OpenAI): {abstract_OpenAI}

## Rules:
1. Availabel options include "BERT+AE", "BERT+DeepSVDD", "BERT+ECOD", "BERT+iForest", "BERT+LOF", "BERT+LUNAR", "BERT+SO-GAAL", "BERT+VAE", "OpenAI+AE", "OpenAI+DeepSVDD", "OpenAI+ECOD", "OpenAI+iForest", "OpenAI+LOF", "OpenAI+LUNAR", "OpenAI+SO-GAAL", "OpenAI+VAE."
2. Treat all models equally and evaluate them based on their compatibility with the dataset characteristics and the anomaly detection task.
3. Response Format:
    - Provide responses in a strict **JSON** format with the keys "reason" and "choice."
        - "reason": Your explanation of the reasoning.
        - "choice": The model you have selected for anomaly detection in this dataset.

Response in JSON format:
"#;

/// Context-free variant used to probe the selector's prior: no dataset
/// block and no abstracts, only the option list and response format.
pub const UMS_TEMPLATE_CONTEXT_FREE: &str = r#"You are an expert in model selection for anomaly detection on text datasets.

## Task:
- Select the model you believe will achieve the best performance for detecting anomalies in a text dataset. Provide a brief explanation of your choice.

## Rules:
1. Availabel options include "BERT+AE", "BERT+DeepSVDD", "BERT+ECOD", "BERT+iForest", "BERT+LOF", "BERT+LUNAR", "BERT+SO-GAAL", "BERT+VAE", "OpenAI+AE", "OpenAI+DeepSVDD", "OpenAI+ECOD", "OpenAI+iForest", "OpenAI+LOF", "OpenAI+LUNAR", "OpenAI+SO-GAAL", "OpenAI+VAE."
2. Treat all models equally and evaluate them based on their compatibility with the dataset characteristics and the anomaly detection task.
3. Response Format:
    - Provide responses in a strict **JSON** format with the keys "reason" and "choice."
        - "reason": Your explanation of the reasoning.
        - "choice": The model you have selected for anomaly detection in this dataset.

Response in JSON format:
"#;

#[derive(Debug, Error)]
pub enum ModelSelError {
    #[error("no abstract installed for slot {slot:?}")]
    MissingAbstract { slot: String },
    #[error("selection response is not valid JSON")]
    MalformedJson,
    #[error("selection response missing key {key:?}")]
    MissingKey { key: &'static str },
    #[error("choice {choice:?} is not one of the canonical options")]
    UnknownOption { choice: String },
    #[error("no baseline entry for ({method:?}, {dataset:?})")]
    MissingCell { method: String, dataset: String },
    #[error("baseline table: {0}")]
    Table(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Per-slot abstract texts pasted into the prompt.
#[derive(Debug, Clone, Default)]
pub struct AbstractSet {
    texts: BTreeMap<String, String>,
}

impl AbstractSet {
    /// Bundled placeholder texts; real abstracts are installed by editing
    /// the files under `assets/abstracts/`.
    pub fn placeholders() -> Self {
        let mut texts = BTreeMap::new();
        texts.insert("AE".into(), include_str!("../assets/abstracts/AE.txt").trim_end().to_string());
        texts.insert("DeepSVDD".into(), include_str!("../assets/abstracts/DeepSVDD.txt").trim_end().to_string());
        texts.insert("ECOD".into(), include_str!("../assets/abstracts/ECOD.txt").trim_end().to_string());
        texts.insert("IForest".into(), include_str!("../assets/abstracts/IForest.txt").trim_end().to_string());
        texts.insert("LOF".into(), include_str!("../assets/abstracts/LOF.txt").trim_end().to_string());
        texts.insert("LUNAR".into(), include_str!("../assets/abstracts/LUNAR.txt").trim_end().to_string());
        texts.insert("SO-GAAL".into(), include_str!("../assets/abstracts/SO-GAAL.txt").trim_end().to_string());
        texts.insert("VAE".into(), include_str!("../assets/abstracts/VAE.txt").trim_end().to_string());
        texts.insert("BERT".into(), include_str!("../assets/abstracts/BERT.txt").trim_end().to_string());
        texts.insert("OpenAI".into(), include_str!("../assets/abstracts/OpenAI.txt").trim_end().to_string());
        Self { texts }
    }

    /// Loads `<slot>.txt` files from a directory, one per slot.
    pub fn from_dir(dir: &Path) -> Result<Self, ModelSelError> {
        let mut texts = BTreeMap::new();
        for slot in ABSTRACT_SLOTS {
            let path = dir.join(format!("{slot}.txt"));
            let text = std::fs::read_to_string(&path)
                .map_err(|_| ModelSelError::MissingAbstract { slot: slot.into() })?;
            texts.insert(slot.to_string(), text.trim_end().to_string());
        }
        Ok(Self { texts })
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.texts.get(slot).map(String::as_str)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateModel {
    pub option_id: String,
    pub embedding_name: String,
    pub detector_name: String,
}

/// All sixteen candidates in canonical order.
pub fn canonical_candidates() -> Vec<CandidateModel> {
    CANONICAL_OPTIONS
        .iter()
        .map(|&option_id| {
            let (embedding, detector) = option_id.split_once('+').unwrap();
            CandidateModel {
                option_id: option_id.to_string(),
                embedding_name: embedding.to_string(),
                detector_name: detector.to_string(),
            }
        })
        .collect()
}

/// Everything the selection prompt needs about a dataset.
#[derive(Debug, Clone)]
pub struct UmsContext {
    pub spec: DatasetSpec,
    /// Test-set size, as reported to the selector.
    pub size: usize,
    pub stats: TextStats,
    pub normal_example: Sample,
    pub anomaly_example: Sample,
    pub abstracts: AbstractSet,
}

pub fn build_ums_prompt(ctx: &UmsContext, context_free: bool) -> Result<String, ModelSelError> {
    if context_free {
        return Ok(UMS_TEMPLATE_CONTEXT_FREE.to_string());
    }
    let mut prompt = UMS_TEMPLATE
        .replace("{name}", &ctx.spec.name)
        .replace("{size}", &ctx.size.to_string())
        .replace("{original_task}", &ctx.spec.original_task)
        .replace("{normal_categories}", &ctx.spec.normal_categories.join(", "))
        .replace("{normal_text}", &ctx.normal_example.text)
        .replace("{anomaly_category}", &ctx.spec.anomaly_category)
        .replace("{anomaly_text}", &ctx.anomaly_example.text)
        .replace("{avg_len}", &format!("{:.1}", ctx.stats.avg))
        .replace("{max_len}", &ctx.stats.max.to_string())
        .replace("{min_len}", &ctx.stats.min.to_string())
        .replace("{std_len}", &format!("{:.1}", ctx.stats.std));
    for slot in ABSTRACT_SLOTS {
        let text = ctx
            .abstracts
            .get(slot)
            .ok_or_else(|| ModelSelError::MissingAbstract { slot: slot.into() })?;
        prompt = prompt.replace(&format!("{{abstract_{slot}}}"), text);
    }
    Ok(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub reason: String,
    pub choice: String,
    pub query_index: usize,
}

/// Strict parse: the choice must equal a canonical option after trimming
/// surrounding whitespace; no fuzzy repair.
pub fn parse_model_choice(text: &str, query_index: usize) -> Result<ModelChoice, ModelSelError> {
    let object = first_json_object(text).ok_or(ModelSelError::MalformedJson)?;
    let reason = object
        .get("reason")
        .and_then(|v| v.as_str())
        .ok_or(ModelSelError::MissingKey { key: "reason" })?
        .to_string();
    let raw = object
        .get("choice")
        .and_then(|v| v.as_str())
        .ok_or(ModelSelError::MissingKey { key: "choice" })?;
    let choice = raw.trim();
    if !CANONICAL_OPTIONS.contains(&choice) {
        return Err(ModelSelError::UnknownOption {
            choice: raw.to_string(),
        });
    }
    Ok(ModelChoice {
        reason,
        choice: choice.to_string(),
        query_index,
    })
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    pub model_id: String,
    pub n_queries: usize,
    pub temperature: f64,
    pub base_seed: i64,
    pub context_free: bool,
}

impl SelectionConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            n_queries: 5,
            temperature: 1.0,
            base_seed: 42,
            context_free: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub choices: Vec<ModelChoice>,
    /// (query index, failure detail) for excluded responses.
    pub failures: Vec<(usize, String)>,
}

/// Queries the selector `n_queries` times, sequentially; each query gets a
/// distinct seed so repeated runs replay deterministically. Malformed
/// responses are logged and excluded rather than retried.
pub fn run_model_selection(
    ctx: &UmsContext,
    provider: &dyn ChatProvider,
    config: &SelectionConfig,
) -> Result<SelectionRun, ModelSelError> {
    let prompt = build_ums_prompt(ctx, config.context_free)?;
    let mut run = SelectionRun {
        choices: Vec::new(),
        failures: Vec::new(),
    };
    for query_index in 0..config.n_queries {
        let request = ChatRequest {
            prompt: prompt.clone(),
            temperature: config.temperature,
            seed: Some(config.base_seed + query_index as i64),
            max_tokens: crate::llm::DEFAULT_MAX_TOKENS_DETECTION,
            model_id: config.model_id.clone(),
        };
        let outcome = provider.complete(&request)?;
        match parse_model_choice(&outcome.text, query_index) {
            Ok(choice) => run.choices.push(choice),
            Err(e) => {
                eprintln!("warning: query {query_index} excluded: {e}");
                run.failures.push((query_index, e.to_string()));
            }
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceAggregate {
    pub counts: BTreeMap<String, usize>,
    pub total_queries: usize,
}

impl ChoiceAggregate {
    /// Options sorted by count descending, ties broken lexicographically.
    pub fn ranked(&self) -> Vec<(String, usize)> {
        let mut entries: Vec<(String, usize)> = self
            .counts
            .iter()
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        entries
    }

    pub fn top(&self, k: usize) -> Vec<(String, usize)> {
        self.ranked().into_iter().take(k).collect()
    }
}

pub fn aggregate_choices(choices: &[ModelChoice]) -> ChoiceAggregate {
    let mut counts = BTreeMap::new();
    for choice in choices {
        *counts.entry(choice.choice.clone()).or_insert(0) += 1;
    }
    ChoiceAggregate {
        counts,
        total_queries: choices.len(),
    }
}

static BASELINE_TABLE: OnceLock<BTreeMap<(String, String), (f64, f64)>> = OnceLock::new();

fn baseline_table() -> &'static BTreeMap<(String, String), (f64, f64)> {
    BASELINE_TABLE.get_or_init(|| {
        let raw = include_str!("../assets/baseline_results.csv");
        let mut table = BTreeMap::new();
        for line in raw.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("method,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 4, "bad baseline row: {line}");
            let auroc: f64 = fields[2].parse().expect("auroc");
            let auprc: f64 = fields[3].parse().expect("auprc");
            table.insert(
                (fields[0].to_string(), fields[1].to_string()),
                (auroc, auprc),
            );
        }
        table
    })
}

/// (AUROC, AUPRC) of a baseline method on a dataset, from the bundled
/// results table. Besides the sixteen options the table carries the
/// "CVDD", "DATE", "Baseline Average", and "Best Performance" rows.
pub fn lookup_baseline_performance(
    method: &str,
    dataset_name: &str,
) -> Result<(f64, f64), ModelSelError> {
    baseline_table()
        .get(&(method.to_string(), dataset_name.to_string()))
        .copied()
        .ok_or_else(|| ModelSelError::MissingCell {
            method: method.to_string(),
            dataset: dataset_name.to_string(),
        })
}

/// Mean looked-up (AUROC, AUPRC) over all choices, duplicates counted.
pub fn evaluate_selection(
    choices: &[ModelChoice],
    dataset_name: &str,
) -> Result<(f64, f64), ModelSelError> {
    assert!(!choices.is_empty(), "no choices to evaluate");
    let pairs: Vec<(f64, f64)> = choices
        .iter()
        .map(|c| lookup_baseline_performance(&c.choice, dataset_name))
        .collect::<Result<_, _>>()?;
    // A unanimous selection scores exactly the table entry; rounding in the
    // running sum must not perturb that.
    if pairs.iter().all(|p| *p == pairs[0]) {
        return Ok(pairs[0]);
    }
    let n = pairs.len() as f64;
    let auroc = pairs.iter().map(|(a, _)| a).sum::<f64>() / n;
    let auprc = pairs.iter().map(|(_, p)| p).sum::<f64>() / n;
    Ok((auroc, auprc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ag_ctx() -> UmsContext {
        UmsContext {
            spec: DatasetSpec {
                name: "AG News".into(),
                original_task: "AG news topics classification".into(),
                normal_categories: vec![
                    "Sports".into(),
                    "Business".into(),
                    "Sci/Tech".into(),
                ],
                anomaly_category: "World".into(),
                expected_train_size: None,
                expected_test_size: None,
            },
            size: 32_109,
            stats: TextStats {
                avg: 190.1,
                max: 959,
                min: 35,
                std: 61.7,
            },
            normal_example: Sample {
                id: "train:0".into(),
                text: "The home team clinched the title in extra time.".into(),
                category: "Sports".into(),
                label: 0,
            },
            anomaly_example: Sample {
                id: "test:1".into(),
                text: "Diplomats met to discuss the border ceasefire.".into(),
                category: "World".into(),
                label: 1,
            },
            abstracts: AbstractSet::placeholders(),
        }
    }

    #[test]
    fn prompt_fills_dataset_block() {
        let prompt = build_ums_prompt(&ag_ctx(), false).unwrap();
        assert!(prompt.contains("- Dataset Name: AG News\n"));
        assert!(prompt.contains("- Dataset Size: 32109\n"));
        assert!(prompt.contains("- Average Length: 190.1\n"));
        assert!(prompt.contains("- Maximum Length: 959\n"));
        assert!(prompt.contains("- Minimum Length: 35\n"));
        assert!(prompt.contains("- Standard Deviation: 61.7\n"));
        assert!(prompt.contains("Normal Category(ies): Sports, Business, Sci/Tech\n"));
        assert!(prompt.contains("clinched the title"));
        assert!(prompt.contains("border ceasefire"));
        assert!(!prompt.contains('{'), "unfilled template slot");
    }

    #[test]
    fn prompt_preserves_option_rule_verbatim() {
        let prompt = build_ums_prompt(&ag_ctx(), false).unwrap();
        assert!(prompt.contains(
            "1. Availabel options include \"BERT+AE\", \"BERT+DeepSVDD\", \"BERT+ECOD\", \"BERT+iForest\", \"BERT+LOF\", \"BERT+LUNAR\", \"BERT+SO-GAAL\", \"BERT+VAE\", \"OpenAI+AE\", \"OpenAI+DeepSVDD\", \"OpenAI+ECOD\", \"OpenAI+iForest\", \"OpenAI+LOF\", \"OpenAI+LUNAR\", \"OpenAI+SO-GAAL\", \"OpenAI+VAE.\""
        ));
    }

    #[test]
    fn context_free_prompt_has_no_dataset_or_model_details() {
        let prompt = build_ums_prompt(&ag_ctx(), true).unwrap();
        assert!(!prompt.contains("AG News"));
        assert!(!prompt.contains("## Dataset Information"));
        assert!(!prompt.contains("## Model Information"));
        assert!(prompt.contains("Availabel options include"));
    }

    #[test]
    fn candidates_cover_the_option_grid() {
        let candidates = canonical_candidates();
        assert_eq!(candidates.len(), 16);
        assert_eq!(candidates[0].embedding_name, "BERT");
        assert_eq!(candidates[0].detector_name, "AE");
        assert!(candidates.iter().all(|c| CANONICAL_OPTIONS
            .contains(&c.option_id.as_str())));
    }

    #[test]
    fn parse_choice_strictness() {
        let choice =
            parse_model_choice(r#"{"reason":"dense texts","choice":"OpenAI+ECOD"}"#, 2).unwrap();
        assert_eq!(choice.choice, "OpenAI+ECOD");
        assert_eq!(choice.query_index, 2);

        // Trimming is the only repair applied.
        let trimmed =
            parse_model_choice(r#"{"reason":"r","choice":" OpenAI+LOF "}"#, 0).unwrap();
        assert_eq!(trimmed.choice, "OpenAI+LOF");

        assert!(matches!(
            parse_model_choice(r#"{"reason":"r","choice":"OpenAI + ECOD"}"#, 0),
            Err(ModelSelError::UnknownOption { .. })
        ));
        assert!(matches!(
            parse_model_choice(r#"{"reason":"r"}"#, 0),
            Err(ModelSelError::MissingKey { key: "choice" })
        ));
        assert!(matches!(
            parse_model_choice("not json", 0),
            Err(ModelSelError::MalformedJson)
        ));
    }

    #[test]
    fn aggregation_orders_by_count_then_name() {
        let mk = |choice: &str, i: usize| ModelChoice {
            reason: String::new(),
            choice: choice.into(),
            query_index: i,
        };
        let choices = vec![
            mk("OpenAI+LUNAR", 0),
            mk("BERT+AE", 1),
            mk("OpenAI+LUNAR", 2),
            mk("OpenAI+AE", 3),
            mk("BERT+AE", 4),
        ];
        let aggregate = aggregate_choices(&choices);
        assert_eq!(aggregate.total_queries, 5);
        assert_eq!(
            aggregate.ranked(),
            vec![
                ("BERT+AE".to_string(), 2),
                ("OpenAI+LUNAR".to_string(), 2),
                ("OpenAI+AE".to_string(), 1),
            ]
        );
        assert_eq!(aggregate.top(1)[0].1, 2);

        let empty = aggregate_choices(&[]);
        assert!(empty.counts.is_empty());
        assert_eq!(empty.total_queries, 0);
    }

    #[test]
    fn baseline_lookup_spot_checks() {
        assert_eq!(
            lookup_baseline_performance("OpenAI+LUNAR", "AG News").unwrap(),
            (0.9226, 0.6918)
        );
        assert_eq!(
            lookup_baseline_performance("BERT+DeepSVDD", "SMS Spam").unwrap(),
            (0.5859, 0.1178)
        );
        assert_eq!(
            lookup_baseline_performance("Baseline Average", "IMDB Reviews").unwrap(),
            (0.5298, 0.2038)
        );
        assert_eq!(
            lookup_baseline_performance("Best Performance", "BBC News").unwrap(),
            (0.9732, 0.8653)
        );
        assert!(matches!(
            lookup_baseline_performance("OpenAI+CBLOF", "AG News"),
            Err(ModelSelError::MissingCell { .. })
        ));
    }

    #[test]
    fn baseline_table_is_complete() {
        // 18 methods plus the two summary rows, across five datasets.
        assert_eq!(baseline_table().len(), 100);
        for option in CANONICAL_OPTIONS {
            for dataset in ["AG News", "BBC News", "IMDB Reviews", "N24 News", "SMS Spam"] {
                lookup_baseline_performance(option, dataset).unwrap();
            }
        }
    }

    #[test]
    fn evaluation_averages_looked_up_pairs() {
        let mk = |choice: &str, i: usize| ModelChoice {
            reason: String::new(),
            choice: choice.into(),
            query_index: i,
        };
        let constant = vec![mk("OpenAI+LUNAR", 0); 5];
        let (auroc, auprc) = evaluate_selection(&constant, "AG News").unwrap();
        assert_eq!(auroc, 0.9226);
        assert_eq!(auprc, 0.6918);

        // Hand-computed mean of two distinct rows.
        let mixed = vec![mk("OpenAI+LUNAR", 0), mk("BERT+AE", 1)];
        let (auroc, auprc) = evaluate_selection(&mixed, "AG News").unwrap();
        assert!((auroc - (0.9226 + 0.7200) / 2.0).abs() < 1e-12);
        assert!((auprc - (0.6918 + 0.2232) / 2.0).abs() < 1e-12);

        // Permutation-invariant.
        let swapped = vec![mk("BERT+AE", 0), mk("OpenAI+LUNAR", 1)];
        assert_eq!(
            evaluate_selection(&mixed, "AG News").unwrap(),
            evaluate_selection(&swapped, "AG News").unwrap()
        );
    }
}

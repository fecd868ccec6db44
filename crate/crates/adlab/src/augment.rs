//! Data augmentation: multi-round keyword-then-sample synthetic generation
//! and category-description generation for richer detection prompts.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, DatasetSpec, Sample};
use crate::jsonx::first_json_object;
use crate::llm::{
    ChatProvider, ChatRequest, LlmError, DEFAULT_MAX_TOKENS_DETECTION,
    DEFAULT_MAX_TOKENS_KEYWORDS,
};
use crate::zeroshot::PromptContext;

/// Keyword-generation prompt (step 1 of synthetic generation).
/// `{num_keyword_groups}` is the per-category group count, `{categories}`
/// the normal category names one per line.
pub const KEYWORD_TEMPLATE: &str = r#"You are an intelligent and professional assistant that generates groups of keywords for given categories in a dataset.
## Task:
- Following the rules below, generate **exactly** {num_keyword_groups} unique keyword groups for **each given category** according to your understanding of the category (and its description).
- Each keyword group will be used to generate synthetic data for the corresponding category.

## Rules:
1. **Keyword Group Generation**:
    - For **each given category**, generate **exactly** {num_keyword_groups} keyword groups. Each group should contain exactly three keywords, with different levels of granularity: one broad/general, one intermediate, and one fine-grained.
    - Ensure that the three keywords in each group are thematically related to each other and align with the category's description.
    - Avoid redundancy or overly similar keywords across different groups.
    - Ensure that each group is unique and relevant to the key topics described in the category.
2. **Granularity**:
    - The first keyword should be broad/general, representing a high-level or overarching topic.
    - The second keyword should be intermediate, more specific than the first, but not overly narrow.
    - The third keyword should be fine-grained and specific, related to detailed subtopics or precise aspects of the category.
3. **Response Format**:
    - For each given category, provide the keyword groups as a list, where each entry is a group of three keywords (broad, intermediate, fine-grained).
    - Structure the response so that the key is the category name, and the value is a list of generated keyword groups.
    - Ensure the JSON output is properly formatted, including correct placement of commas between key-value pairs and no missing brackets.
    - Add a backslash (\) before any double quotation marks (") within the values of JSON output for proper parsing (i.e., from " to \"), and ensure that single quotation marks (') are preserved without escaping.

The "{name}" dataset's original task is {original_task}. It contains the following category(ies):
{categories}

Response in JSON format:
"#;

/// Sample-generation prompt (step 2): one synthetic sample per keyword
/// group.
pub const SAMPLE_TEMPLATE: &str = r#"You are an intelligent and professional assistant that generates a synthetic text sample based on a group of 3 keywords with different levels of granularity.
## Task:
- Generate a synthetic text sample that incorporates the provided group of 3 keywords (broad, intermediate, and fine-grained) listed below.
- The generated sample should align with the meanings and themes suggested by the keywords provided.

## Rules:
1. **Sample Characteristics**:
    - Generate a synthetic text sample that naturally incorporates the three provided keywords (broad, intermediate, and fine-grained).
    - Ensure that the text sample is coherent and contextually relevant to the themes suggested by the keywords.
2. **Keyword Usage**:
    - The three keywords must appear naturally within the content.
    - Ensure that the broad keyword sets the overall context, the intermediate keyword refines the discussion, and the fine-grained keyword offers more detailed insight into a specific subtopic.
3. **Response Format**:
    - Provide the generated sample as a single string response representing the text sample.
    - Ensure the output is in a readable format.
    - Do not include any additional messages or commentary.
    - Add a backslash (\) before any double quotation marks (") within the values of JSON output for proper parsing (i.e., from " to \"), and ensure that single quotation marks (') are preserved without escaping.

The "{name}" dataset's original task is {original_task}. The category is "{category}", and the group of keywords to use is:
- Broad: {keyword_group[0]}
- Intermediate: {keyword_group[1]}
- Fine-grained: {keyword_group[2]}

Response in JSON format:
"#;

/// Category-description prompt. `{categories}` lists the normal category
/// names one per line followed by the anomaly category.
pub const DESCRIPTION_TEMPLATE: &str = r#"You are an intelligent and professional assistant that generates descriptions for given categories in a text dataset.
## Task:
- Following the rules below, generate detailed textual descriptions that explain the main characteristics, typical topics, and common examples for each given category.

## Rules:
1. For each category, provide a continuous, coherent description in a single paragraph that includes:
    - **Definition or overview**: Start by briefly defining or describing the category in one to two sentences. If you list multiple aspects or features in the definition (such as related fields or industries), ensure you append expressions like "etc." or "and so on" to indicate that the list is not exhaustive.
    - **Main topics or subjects**: Highlight the typical topics or subjects covered by this category. Ensure that you use phrases like "etc." or "and so on" at the end of each list to indicate that the list is not exhaustive.
    - **Relevant examples**: Mention examples of content that belong to this category. Also, use expressions like "etc." or "and so on" at the end of the list to show that these are illustrative, not exhaustive.
2. Use **step-by-step reasoning** to ensure the descriptions are logical and clear.
3. Each description should be clear, coherent, and helpful for someone unfamiliar with the dataset and the task.
4. Always append phrases like "etc." or "and so on" to lists or enumerations of examples, topics, or aspects, **including the definition part**.
5. Response Format:
    - Provide a response where each key is the category name, and the value is the corresponding description as a continuous paragraph.
    - Ensure the JSON output is correctly formatted, including correct placement of commas between key-value pairs.
    - Add a backslash (\) before any double quotation marks (") within the values of JSON output for proper parsing (i.e., from " to \"), and ensure that single quotation marks (') are preserved without escaping.

The "{name}" dataset's original task is {original_task}. It contains the following categories:
{categories}

Response in JSON format:
"#;

/// Description generation balances diversity and precision at this
/// temperature.
pub const DESCRIPTION_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("keyword response is not valid JSON")]
    MalformedJson,
    #[error("category {category:?} missing from response")]
    MissingCategory { category: String },
    #[error("category {category:?}: expected {expected} groups, found {found}")]
    WrongGroupCount {
        category: String,
        expected: usize,
        found: usize,
    },
    #[error("category {category:?} group {index}: expected 3 keywords, found {found}")]
    WrongArity {
        category: String,
        index: usize,
        found: usize,
    },
    #[error("synthetic sample for category {category:?} is empty")]
    EmptySample { category: String },
    #[error("category {category:?} is not a normal category of {dataset:?}")]
    CategoryViolation { category: String, dataset: String },
    #[error("no description for category {category:?}")]
    DescriptionGap { category: String },
    #[error("sink {path}: {detail}")]
    Sink { path: String, detail: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordGroup {
    pub category: String,
    pub broad: String,
    pub intermediate: String,
    pub fine: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSample {
    pub category: String,
    pub keywords: KeywordGroup,
    pub text: String,
    pub round_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundConfig {
    pub temperature: f64,
    pub seed: i64,
    pub suffix: String,
}

/// The four-round generation schedule: temperatures [1.0, 0.9, 0.8, 0.7],
/// seeds [42, 43, 44, 45], and one encouragement suffix per round.
pub fn paper_round_schedule() -> Vec<RoundConfig> {
    let suffixes = [
        "This is the first time you do this task, good luck!",
        "You've completed this task before, and you're improving at it.",
        "After doing this task twice, you have a better understanding of it.",
        "You have done this task three times, you are now an expert at it.",
    ];
    [1.0, 0.9, 0.8, 0.7]
        .into_iter()
        .zip(42..)
        .zip(suffixes)
        .map(|((temperature, seed), suffix)| RoundConfig {
            temperature,
            seed,
            suffix: suffix.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDescription {
    pub category: String,
    pub text: String,
}

pub fn build_keyword_prompt(spec: &DatasetSpec, t: usize, suffix: &str) -> String {
    let prompt = KEYWORD_TEMPLATE
        .replace("{num_keyword_groups}", &t.to_string())
        .replace("{name}", &spec.name)
        .replace("{original_task}", &spec.original_task)
        .replace("{categories}", &spec.normal_categories.join("\n"));
    if suffix.is_empty() {
        prompt
    } else {
        format!("{prompt}{suffix}\n")
    }
}

fn parse_group_value(
    value: &serde_json::Value,
    category: &str,
    index: usize,
) -> Result<KeywordGroup, AugmentError> {
    let items: Vec<&str> = value
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str()).collect())
        .unwrap_or_default();
    if items.len() != 3 || value.as_array().map(|a| a.len()) != Some(3) {
        return Err(AugmentError::WrongArity {
            category: category.to_string(),
            index,
            found: value.as_array().map(|a| a.len()).unwrap_or(0),
        });
    }
    Ok(KeywordGroup {
        category: category.to_string(),
        broad: items[0].to_string(),
        intermediate: items[1].to_string(),
        fine: items[2].to_string(),
    })
}

/// Strict parse: every normal category present with exactly `t` well-formed
/// groups.
pub fn parse_keyword_groups(
    text: &str,
    spec: &DatasetSpec,
    t: usize,
) -> Result<Vec<KeywordGroup>, AugmentError> {
    let (groups, shortfalls) = parse_keyword_groups_tolerant(text, spec, t)?;
    if let Some((category, found)) = shortfalls.into_iter().next() {
        return Err(AugmentError::WrongGroupCount {
            category,
            expected: t,
            found,
        });
    }
    Ok(groups)
}

/// Lenient parse used by the round runner: under-delivery is reported as a
/// shortfall instead of an error, over-delivery is truncated to `t`.
/// Missing categories and malformed groups still fail.
pub fn parse_keyword_groups_tolerant(
    text: &str,
    spec: &DatasetSpec,
    t: usize,
) -> Result<(Vec<KeywordGroup>, Vec<(String, usize)>), AugmentError> {
    let object = first_json_object(text).ok_or(AugmentError::MalformedJson)?;
    let mut groups = Vec::new();
    let mut shortfalls = Vec::new();
    for category in &spec.normal_categories {
        let list = object
            .get(category)
            .and_then(|v| v.as_array())
            .ok_or_else(|| AugmentError::MissingCategory {
                category: category.clone(),
            })?;
        if list.len() < t {
            shortfalls.push((category.clone(), list.len()));
        }
        for (index, value) in list.iter().take(t).enumerate() {
            groups.push(parse_group_value(value, category, index)?);
        }
    }
    Ok((groups, shortfalls))
}

fn normalized(group: &KeywordGroup) -> (String, String, String, String) {
    let fold = |s: &str| s.trim().to_lowercase();
    (
        fold(&group.category),
        fold(&group.broad),
        fold(&group.intermediate),
        fold(&group.fine),
    )
}

/// Removes duplicate groups, keeping the first occurrence. Equality is the
/// case-folded, whitespace-trimmed triple plus category.
pub fn dedup_keyword_groups(groups: &[KeywordGroup]) -> Vec<KeywordGroup> {
    let mut seen = HashSet::new();
    groups
        .iter()
        .filter(|g| seen.insert(normalized(g)))
        .cloned()
        .collect()
}

pub fn build_sample_prompt(group: &KeywordGroup, spec: &DatasetSpec) -> String {
    SAMPLE_TEMPLATE
        .replace("{name}", &spec.name)
        .replace("{original_task}", &spec.original_task)
        .replace("{category}", &group.category)
        .replace("{keyword_group[0]}", &group.broad)
        .replace("{keyword_group[1]}", &group.intermediate)
        .replace("{keyword_group[2]}", &group.fine)
}

/// The sample template asks for a single string; providers sometimes wrap
/// it in JSON anyway, so accept a quoted string, a one-value object, or the
/// raw text.
fn extract_sample_text(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.starts_with('"') {
        if let Ok(s) = serde_json::from_str::<String>(trimmed) {
            return s;
        }
    }
    if trimmed.starts_with('{') {
        if let Some(object) = first_json_object(trimmed) {
            if let Some(map) = object.as_object() {
                if map.len() == 1 {
                    if let Some(s) = map.values().next().and_then(|v| v.as_str()) {
                        return s.to_string();
                    }
                }
            }
        }
    }
    trimmed.to_string()
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub model_id: String,
    pub parallelism: usize,
    /// Optional JSONL sink; each finished sample is appended immediately so
    /// an aborted round leaves its partial results on disk.
    pub sink: Option<PathBuf>,
}

impl SynthConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            parallelism: 4,
            sink: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRun {
    pub samples: Vec<SynthSample>,
    /// (round index, category, groups delivered) for under-delivering
    /// keyword responses.
    pub shortfalls: Vec<(usize, String, usize)>,
    /// Duplicate groups dropped by cross-round dedup.
    pub duplicates_removed: usize,
}

/// Runs the keywords-then-samples pipeline over all rounds. One keyword
/// inquiry per round; one sample inquiry per unique group (deduped across
/// rounds). Samples inherit the round's temperature and seed.
pub fn run_synth_rounds(
    spec: &DatasetSpec,
    t: usize,
    rounds: &[RoundConfig],
    provider: &dyn ChatProvider,
    config: &SynthConfig,
) -> Result<SynthRun, AugmentError> {
    let mut run = SynthRun {
        samples: Vec::new(),
        shortfalls: Vec::new(),
        duplicates_removed: 0,
    };
    if t == 0 {
        return Ok(run);
    }
    let mut seen = HashSet::new();
    let mut parsed_total = 0usize;
    for (round_index, round) in rounds.iter().enumerate() {
        let request = ChatRequest {
            prompt: build_keyword_prompt(spec, t, &round.suffix),
            temperature: round.temperature,
            seed: Some(round.seed),
            max_tokens: DEFAULT_MAX_TOKENS_KEYWORDS,
            model_id: config.model_id.clone(),
        };
        let outcome = provider.complete(&request)?;
        let (groups, shortfalls) = parse_keyword_groups_tolerant(&outcome.text, spec, t)?;
        for (category, found) in shortfalls {
            eprintln!(
                "warning: round {round_index} delivered {found}/{t} groups for {category:?}"
            );
            run.shortfalls.push((round_index, category, found));
        }
        parsed_total += groups.len();
        let fresh: Vec<KeywordGroup> = groups
            .into_iter()
            .filter(|g| seen.insert(normalized(g)))
            .collect();

        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<SynthSample, AugmentError>>>> =
            fresh.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..config.parallelism.max(1).min(fresh.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= fresh.len() {
                        break;
                    }
                    let group = &fresh[i];
                    let request = ChatRequest {
                        prompt: build_sample_prompt(group, spec),
                        temperature: round.temperature,
                        seed: Some(round.seed),
                        max_tokens: DEFAULT_MAX_TOKENS_DETECTION,
                        model_id: config.model_id.clone(),
                    };
                    let result = provider.complete(&request).map_err(Into::into).and_then(
                        |outcome| {
                            let text = extract_sample_text(&outcome.text);
                            if text.is_empty() {
                                return Err(AugmentError::EmptySample {
                                    category: group.category.clone(),
                                });
                            }
                            Ok(SynthSample {
                                category: group.category.clone(),
                                keywords: group.clone(),
                                text,
                                round_index,
                            })
                        },
                    );
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        for slot in slots {
            let sample = slot.into_inner().unwrap().expect("slot filled")?;
            if let Some(path) = &config.sink {
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| AugmentError::Sink {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    })?;
                writeln!(file, "{}", serde_json::to_string(&sample).expect("serializable"))
                    .map_err(|e| AugmentError::Sink {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    })?;
            }
            run.samples.push(sample);
        }
    }
    run.duplicates_removed = parsed_total - run.samples.len();
    Ok(run)
}

/// D_DA = small train ∪ synthetic samples. Synthetic samples get label 0
/// and ids "synth:{round}:{category}:{index}" with a per-round-and-category
/// index.
pub fn build_dataset_with_synth(
    small_train: &Dataset,
    synth: &[SynthSample],
) -> Result<Dataset, AugmentError> {
    let mut dataset = small_train.clone();
    let mut counters: std::collections::HashMap<(usize, &str), usize> =
        std::collections::HashMap::new();
    for sample in synth {
        if !small_train
            .spec
            .normal_categories
            .contains(&sample.category)
        {
            return Err(AugmentError::CategoryViolation {
                category: sample.category.clone(),
                dataset: small_train.spec.name.clone(),
            });
        }
        let counter = counters
            .entry((sample.round_index, sample.category.as_str()))
            .or_insert(0);
        dataset.train.push(Sample {
            id: format!(
                "synth:{}:{}:{}",
                sample.round_index, sample.category, counter
            ),
            text: sample.text.clone(),
            category: sample.category.clone(),
            label: 0,
        });
        *counter += 1;
    }
    Ok(dataset)
}

pub fn build_description_prompt(spec: &DatasetSpec) -> String {
    let mut categories = spec.normal_categories.clone();
    categories.push(spec.anomaly_category.clone());
    DESCRIPTION_TEMPLATE
        .replace("{name}", &spec.name)
        .replace("{original_task}", &spec.original_task)
        .replace("{categories}", &categories.join("\n"))
}

/// One description per listed category, normal categories first, anomaly
/// last.
pub fn parse_descriptions(
    text: &str,
    spec: &DatasetSpec,
) -> Result<Vec<CategoryDescription>, AugmentError> {
    let object = first_json_object(text).ok_or(AugmentError::MalformedJson)?;
    spec.normal_categories
        .iter()
        .chain(std::iter::once(&spec.anomaly_category))
        .map(|category| {
            let text = object
                .get(category)
                .and_then(|v| v.as_str())
                .ok_or_else(|| AugmentError::MissingCategory {
                    category: category.clone(),
                })?;
            Ok(CategoryDescription {
                category: category.clone(),
                text: text.to_string(),
            })
        })
        .collect()
}

/// Attaches descriptions to a prompt context. Every normal category must be
/// covered; the anomaly description is attached only when the context has
/// an anomaly entry (i.e. the NormalPlusAnomaly setting).
pub fn enrich_context(
    ctx: &PromptContext,
    descriptions: &[CategoryDescription],
) -> Result<PromptContext, AugmentError> {
    let lookup: std::collections::HashMap<&str, &str> = descriptions
        .iter()
        .map(|d| (d.category.as_str(), d.text.as_str()))
        .collect();
    let mut enriched = ctx.clone();
    for category in &mut enriched.normal {
        let text = lookup
            .get(category.name.as_str())
            .ok_or_else(|| AugmentError::DescriptionGap {
                category: category.name.clone(),
            })?;
        category.description = Some(text.to_string());
    }
    if let Some(anomaly) = &mut enriched.anomaly {
        let text = lookup
            .get(anomaly.name.as_str())
            .ok_or_else(|| AugmentError::DescriptionGap {
                category: anomaly.name.clone(),
            })?;
        anomaly.description = Some(text.to_string());
    }
    Ok(enriched)
}

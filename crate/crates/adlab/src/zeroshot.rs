//! Zero-shot detection: prompt construction for both category settings,
//! verbal-score parsing, and the full test-split run loop with failure
//! bookkeeping.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::jsonx::first_json_object;
use crate::llm::{
    detect_repetition_loop, is_safety_refusal, ChatOutcome, ChatProvider, ChatRequest,
    FailureKind, LlmError, LlmFailure, DEFAULT_MAX_TOKENS_DETECTION, DEFAULT_REFUSAL_PHRASES,
};

/// Detection prompt, categories given without an anomaly section.
/// `{categories}` expands to one bullet per normal category; `{text}` is the
/// test sample.
pub const DETECTION_TEMPLATE_NORMAL_ONLY: &str = r#"You are an intelligent and professional assistant that detects anomalies in text data.
## Task:
- Following the rules below, determine whether the given text sample is an anomaly. Provide a brief explanation of your reasoning and assign an anomaly confidence score between 0 and 1.

## Categories:
{categories}

## Rules:
1. **Anomaly Definition**:
    - A text sample is considered an **anomaly** if it does **not** belong to **any of the categories** listed above.
2. **Scoring**:
    - Assign an anomaly confidence score between 0 and 1.
    - Use higher scores when you are highly confident in your decision.
    - Use lower scores when you are uncertain or think the text sample is **not** an anomaly.
3. **Step-by-step Reasoning** (Chain of Thought):
    - **Step 1**. Read the entire text sample carefully and understand it thoroughly.
    - **Step 2**. Analyze the text sample by comparing its content to each category listed in the "Categories" section above, considering factors such as main topics, meanings, background, sentiments, etc.
    - **Step 3**. Determine which category the text sample **most closely aligns with**.
        - If it aligns with any category, it is **not** an anomaly.
        - If it does **not** align with any category, it is an anomaly.
    - **Step 4**. Assign an anomaly confidence score based on how confident you are that the text sample is an anomaly.
4. **Additional Notes**:
    - A text sample may relate to multiple categories, but it should be classified into the **most relevant** one in this task.
    - If you are uncertain whether the text sample **significantly aligns** with **any of the anomaly category(ies)**, assume that it does **not**, which means it is **not** an anomaly.
5. **Response Format**:
    - Provide responses in a strict **JSON** format with the keys "reason" and "anomaly_score."
        - "reason": Your brief explanation of the reasoning in one to three sentences logically.
        - "anomaly_score": Your anomaly confidence score between 0 and 1.
    - Ensure the JSON output is correctly formatted, including correct placement of commas between key-value pairs.
    - Add a backslash (\) before any double quotation marks (") within the values of JSON output for proper parsing (i.e., from " to \"), and ensure that single quotation marks (') are preserved without escaping.
Text sample:
"{text}"

Response in JSON format:
"#;

/// Detection prompt with both normal and anomaly categories. Differs from
/// the normal-only template exactly in the category section headers, the
/// anomaly definition, and the Step-3 branches.
pub const DETECTION_TEMPLATE_NORMAL_PLUS_ANOMALY: &str = r#"You are an intelligent and professional assistant that detects anomalies in text data.
## Task:
- Following the rules below, determine whether the given text sample is an anomaly. Provide a brief explanation of your reasoning and assign an anomaly confidence score between 0 and 1.

## Categories:
### Normal Category(ies):
{categories}
### Anomaly Category(ies):
{anomaly}

## Rules:
1. **Anomaly Definition**:
    - A text sample is considered an **anomaly** if it belongs to the **anomaly category(ies)** rather than **any of the normal category(ies)** listed above.
2. **Scoring**:
    - Assign an anomaly confidence score between 0 and 1.
    - Use higher scores when you are highly confident in your decision.
    - Use lower scores when you are uncertain or think the text sample is **not** an anomaly.
3. **Step-by-step Reasoning** (Chain of Thought):
    - **Step 1**. Read the entire text sample carefully and understand it thoroughly.
    - **Step 2**. Analyze the text sample by comparing its content to each category listed in the "Categories" section above, considering factors such as main topics, meanings, background, sentiments, etc.
    - **Step 3**. Determine which category the text sample **most closely aligns with**.
        - If it **most closely aligns with** **any of the anomaly category(ies)**, it is an **anomaly**.
        - If it **most closely aligns with** **any of the normal category(ies)** instead, it is **not** an anomaly.
    - **Step 4**. Assign an anomaly confidence score based on how confident you are that the text sample is an anomaly.
4. **Additional Notes**:
    - A text sample may relate to multiple categories, but it should be classified into the **most relevant** one in this task.
    - If you are uncertain whether the text sample **significantly aligns** with **any of the anomaly category(ies)**, assume that it does **not**, which means it is **not** an anomaly.
5. **Response Format**:
    - Provide responses in a strict **JSON** format with the keys "reason" and "anomaly_score."
        - "reason": Your brief explanation of the reasoning in one to three sentences logically.
        - "anomaly_score": Your anomaly confidence score between 0 and 1.
    - Ensure the JSON output is correctly formatted, including correct placement of commas between key-value pairs.
    - Add a backslash (\) before any double quotation marks (") within the values of JSON output for proper parsing (i.e., from " to \"), and ensure that single quotation marks (') are preserved without escaping.
Text sample:
"{text}"

Response in JSON format:
"#;

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("context/setting mismatch: {0}")]
    ContextMismatch(String),
    #[error("record file {path}: {detail}")]
    Store { path: String, detail: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionSetting {
    NormalOnly,
    NormalPlusAnomaly,
}

impl std::str::FromStr for DetectionSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal-only" => Ok(Self::NormalOnly),
            "normal-anomaly" => Ok(Self::NormalPlusAnomaly),
            other => Err(format!("unknown setting {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryContext {
    pub name: String,
    pub description: Option<String>,
}

impl CategoryContext {
    pub fn plain(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: None,
        }
    }
}

/// Categories (and optional generated descriptions) that parameterize the
/// detection prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptContext {
    pub normal: Vec<CategoryContext>,
    pub anomaly: Option<CategoryContext>,
}

impl PromptContext {
    pub fn from_names(normal: &[String], anomaly: Option<&str>) -> Self {
        Self {
            normal: normal.iter().map(CategoryContext::plain).collect(),
            anomaly: anomaly.map(CategoryContext::plain),
        }
    }

    fn validate(&self, setting: DetectionSetting) -> Result<(), ZeroShotError> {
        if self.normal.is_empty() {
            return Err(ZeroShotError::ContextMismatch(
                "no normal categories".into(),
            ));
        }
        let described = self
            .normal
            .iter()
            .chain(self.anomaly.iter())
            .filter_map(|c| c.description.as_deref());
        for d in described {
            if d.is_empty() {
                return Err(ZeroShotError::ContextMismatch(
                    "empty category description".into(),
                ));
            }
        }
        match setting {
            DetectionSetting::NormalOnly if self.anomaly.is_some() => Err(
                ZeroShotError::ContextMismatch("anomaly category given for NormalOnly".into()),
            ),
            DetectionSetting::NormalPlusAnomaly if self.anomaly.is_none() => {
                Err(ZeroShotError::ContextMismatch(
                    "NormalPlusAnomaly requires an anomaly category".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

fn bullet(category: &CategoryContext, bold: bool) -> String {
    let name = if bold {
        format!("**{}**", category.name)
    } else {
        category.name.clone()
    };
    match &category.description {
        Some(d) => format!("- {name}: {d}"),
        None => format!("- {name}"),
    }
}

pub fn build_detection_prompt(
    text: &str,
    ctx: &PromptContext,
    setting: DetectionSetting,
) -> Result<String, ZeroShotError> {
    ctx.validate(setting)?;
    let categories: Vec<String> = ctx.normal.iter().map(|c| bullet(c, true)).collect();
    let prompt = match setting {
        DetectionSetting::NormalOnly => DETECTION_TEMPLATE_NORMAL_ONLY
            .replace("{categories}", &categories.join("\n")),
        DetectionSetting::NormalPlusAnomaly => DETECTION_TEMPLATE_NORMAL_PLUS_ANOMALY
            .replace("{categories}", &categories.join("\n"))
            .replace("{anomaly}", &bullet(ctx.anomaly.as_ref().unwrap(), false)),
    };
    Ok(prompt.replace("{text}", text))
}

/// Outcome of one detection query: either a parsed (reason, score) pair or
/// a classified failure, never both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub sample_id: String,
    pub reason: Option<String>,
    pub anomaly_score: Option<f64>,
    pub failure: Option<LlmFailure>,
}

impl DetectionRecord {
    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

/// Extracts (reason, anomaly_score) from a raw response. Scores outside
/// [0, 1] are rejected rather than clamped.
pub fn parse_detection_response(text: &str) -> Result<(String, f64), LlmFailure> {
    let object = first_json_object(text).ok_or_else(|| {
        LlmFailure::new(FailureKind::MalformedOutput, "no JSON object in response")
    })?;
    let reason = object
        .get("reason")
        .and_then(|v| v.as_str())
        .ok_or_else(|| LlmFailure::new(FailureKind::MalformedOutput, "missing key \"reason\""))?
        .to_string();
    let score = object
        .get("anomaly_score")
        .ok_or_else(|| {
            LlmFailure::new(FailureKind::MalformedOutput, "missing key \"anomaly_score\"")
        })?
        .as_f64()
        .ok_or_else(|| {
            LlmFailure::new(FailureKind::FormatViolation, "anomaly_score is not numeric")
        })?;
    if !(0.0..=1.0).contains(&score) {
        return Err(LlmFailure::new(
            FailureKind::FormatViolation,
            format!("anomaly_score {score} outside [0, 1]"),
        ));
    }
    Ok((reason, score))
}

/// Full classification of a raw outcome: refusal and loop screens first,
/// then JSON parsing.
pub fn classify_outcome(outcome: &ChatOutcome) -> Result<(String, f64), LlmFailure> {
    if is_safety_refusal(outcome, &DEFAULT_REFUSAL_PHRASES) {
        return Err(LlmFailure::new(
            FailureKind::SafetyRefusal,
            "provider refused the request",
        ));
    }
    if detect_repetition_loop(&outcome.text) {
        return Err(LlmFailure::new(
            FailureKind::RepetitionLoop,
            "degenerate repeated output",
        ));
    }
    parse_detection_response(&outcome.text)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_id: String,
    pub temperature: f64,
    pub seed: Option<i64>,
    pub max_tokens: u32,
    pub parallelism: usize,
    /// JSONL sink for incremental persistence; completed samples are
    /// skipped on resume.
    pub records_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            seed: Some(42),
            max_tokens: DEFAULT_MAX_TOKENS_DETECTION,
            parallelism: 4,
            records_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroShotRun {
    pub records: Vec<DetectionRecord>,
    pub error_counts: BTreeMap<FailureKind, usize>,
}

impl ZeroShotRun {
    /// (scores, labels) over non-failed samples only, in test order.
    pub fn scored(&self, dataset: &Dataset) -> (Vec<f64>, Vec<u8>) {
        let labels: BTreeMap<&str, u8> = dataset
            .test
            .iter()
            .map(|s| (s.id.as_str(), s.label))
            .collect();
        let mut scores = Vec::new();
        let mut kept = Vec::new();
        for record in &self.records {
            if let Some(score) = record.anomaly_score {
                scores.push(score);
                kept.push(labels[record.sample_id.as_str()]);
            }
        }
        (scores, kept)
    }
}

fn store_err(path: &std::path::Path, e: impl std::fmt::Display) -> ZeroShotError {
    ZeroShotError::Store {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Runs detection over the full test split. One record per sample; failures
/// are tallied per kind and excluded from downstream metrics. Transport
/// failures surface as per-sample records (retries happen inside the
/// provider); replay misses and store errors abort the run.
pub fn run_zero_shot(
    dataset: &Dataset,
    ctx: &PromptContext,
    setting: DetectionSetting,
    provider: &dyn ChatProvider,
    config: &RunConfig,
) -> Result<ZeroShotRun, ZeroShotError> {
    ctx.validate(setting)?;

    let mut done: BTreeMap<String, DetectionRecord> = BTreeMap::new();
    if let Some(path) = &config.records_path {
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| store_err(path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let record: DetectionRecord =
                    serde_json::from_str(line).map_err(|e| store_err(path, e))?;
                done.insert(record.sample_id.clone(), record);
            }
        }
    }
    let mut sink = match &config.records_path {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| store_err(path, e))?,
        ),
        None => None,
    };

    let pending: Vec<usize> = (0..dataset.test.len())
        .filter(|&i| !done.contains_key(&dataset.test[i].id))
        .collect();

    // Fan out over pending samples; chunked so completed work lands on disk
    // in sample order as the run progresses.
    let chunk_size = config.parallelism.max(1) * 4;
    let mut fresh: BTreeMap<usize, DetectionRecord> = BTreeMap::new();
    for chunk in pending.chunks(chunk_size.max(1)) {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<DetectionRecord, ZeroShotError>>>> =
            chunk.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..config.parallelism.max(1).min(chunk.len()) {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::SeqCst);
                    if c >= chunk.len() {
                        break;
                    }
                    let sample = &dataset.test[chunk[c]];
                    *slots[c].lock().unwrap() =
                        Some(detect_one(sample, ctx, setting, provider, config));
                });
            }
        });
        for (slot, &i) in slots.into_iter().zip(chunk) {
            let record = slot.into_inner().unwrap().expect("slot filled")?;
            if let Some(sink) = &mut sink {
                let line = serde_json::to_string(&record).expect("serializable");
                writeln!(sink, "{line}")
                    .map_err(|e| store_err(config.records_path.as_ref().unwrap(), e))?;
            }
            fresh.insert(i, record);
        }
    }

    let records: Vec<DetectionRecord> = dataset
        .test
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            fresh
                .remove(&i)
                .or_else(|| done.remove(&sample.id))
                .expect("every sample processed")
        })
        .collect();

    let mut error_counts: BTreeMap<FailureKind, usize> =
        FailureKind::ALL.iter().map(|&k| (k, 0)).collect();
    for record in &records {
        if let Some(failure) = &record.failure {
            *error_counts.get_mut(&failure.kind).unwrap() += 1;
        }
    }
    Ok(ZeroShotRun {
        records,
        error_counts,
    })
}

fn detect_one(
    sample: &crate::corpus::Sample,
    ctx: &PromptContext,
    setting: DetectionSetting,
    provider: &dyn ChatProvider,
    config: &RunConfig,
) -> Result<DetectionRecord, ZeroShotError> {
    let prompt = build_detection_prompt(&sample.text, ctx, setting)?;
    let request = ChatRequest {
        prompt,
        temperature: config.temperature,
        seed: config.seed,
        max_tokens: config.max_tokens,
        model_id: config.model_id.clone(),
    };
    let outcome = match provider.complete(&request) {
        Ok(outcome) => outcome,
        Err(LlmError::Transport { attempts, detail }) => {
            return Ok(DetectionRecord {
                sample_id: sample.id.clone(),
                reason: None,
                anomaly_score: None,
                failure: Some(LlmFailure::new(
                    FailureKind::Transport,
                    format!("{attempts} attempts: {detail}"),
                )),
            });
        }
        Err(e) => return Err(e.into()),
    };
    Ok(match classify_outcome(&outcome) {
        Ok((reason, score)) => DetectionRecord {
            sample_id: sample.id.clone(),
            reason: Some(reason),
            anomaly_score: Some(score),
            failure: None,
        },
        Err(failure) => DetectionRecord {
            sample_id: sample.id.clone(),
            reason: None,
            anomaly_score: None,
            failure: Some(failure),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::FinishReason;

    fn ag_news_ctx() -> PromptContext {
        PromptContext::from_names(
            &[
                "Sports".to_string(),
                "Business".to_string(),
                "Sci/Tech".to_string(),
            ],
            Some("World"),
        )
    }

    #[test]
    fn normal_only_prompt_lists_categories_without_anomaly_section() {
        let mut ctx = ag_news_ctx();
        ctx.anomaly = None;
        let prompt =
            build_detection_prompt("Team wins final.", &ctx, DetectionSetting::NormalOnly)
                .unwrap();
        assert!(prompt.contains("- **Sports**\n- **Business**\n- **Sci/Tech**"));
        assert!(!prompt.contains("Anomaly Category(ies)"));
        assert!(prompt.contains("\"Team wins final.\""));
        assert!(prompt.ends_with("Response in JSON format:\n"));
    }

    #[test]
    fn normal_plus_anomaly_prompt_names_the_anomaly() {
        let prompt = build_detection_prompt(
            "Stocks rally.",
            &ag_news_ctx(),
            DetectionSetting::NormalPlusAnomaly,
        )
        .unwrap();
        assert!(prompt.contains("### Normal Category(ies):\n- **Sports**"));
        assert!(prompt.contains("### Anomaly Category(ies):\n- World\n"));
        assert!(prompt.contains("if it belongs to the **anomaly category(ies)**"));
    }

    #[test]
    fn setting_delta_touches_only_marked_regions() {
        let mut normal_only_ctx = ag_news_ctx();
        normal_only_ctx.anomaly = None;
        let a = build_detection_prompt("x", &normal_only_ctx, DetectionSetting::NormalOnly)
            .unwrap();
        let b =
            build_detection_prompt("x", &ag_news_ctx(), DetectionSetting::NormalPlusAnomaly)
                .unwrap();
        let a_lines: Vec<&str> = a.lines().collect();
        let b_lines: Vec<&str> = b.lines().collect();
        let only_in_b: Vec<&&str> = b_lines.iter().filter(|l| !a_lines.contains(l)).collect();
        assert_eq!(
            only_in_b,
            [
                &"### Normal Category(ies):",
                &"### Anomaly Category(ies):",
                &"- World",
                &"    - A text sample is considered an **anomaly** if it belongs to the **anomaly category(ies)** rather than **any of the normal category(ies)** listed above.",
                &"        - If it **most closely aligns with** **any of the anomaly category(ies)**, it is an **anomaly**.",
                &"        - If it **most closely aligns with** **any of the normal category(ies)** instead, it is **not** an anomaly.",
            ]
        );
        let only_in_a: Vec<&&str> = a_lines.iter().filter(|l| !b_lines.contains(l)).collect();
        assert_eq!(
            only_in_a,
            [
                &"    - A text sample is considered an **anomaly** if it does **not** belong to **any of the categories** listed above.",
                &"        - If it aligns with any category, it is **not** an anomaly.",
                &"        - If it does **not** align with any category, it is an anomaly.",
            ]
        );
    }

    #[test]
    fn descriptions_extend_category_bullets() {
        let mut ctx = ag_news_ctx();
        ctx.normal[0].description = Some("Athletic events and competitions.".into());
        ctx.anomaly.as_mut().unwrap().description = Some("International affairs.".into());
        let prompt =
            build_detection_prompt("x", &ctx, DetectionSetting::NormalPlusAnomaly).unwrap();
        assert!(prompt.contains("- **Sports**: Athletic events and competitions.\n"));
        assert!(prompt.contains("- World: International affairs.\n"));
    }

    #[test]
    fn context_setting_mismatch_rejected() {
        assert!(build_detection_prompt("x", &ag_news_ctx(), DetectionSetting::NormalOnly)
            .is_err());
        let mut no_anomaly = ag_news_ctx();
        no_anomaly.anomaly = None;
        assert!(build_detection_prompt(
            "x",
            &no_anomaly,
            DetectionSetting::NormalPlusAnomaly
        )
        .is_err());
    }

    #[test]
    fn parse_happy_path() {
        let (reason, score) =
            parse_detection_response(r#"{"reason":"fits Sports","anomaly_score":0.1}"#).unwrap();
        assert_eq!(reason, "fits Sports");
        assert_eq!(score, 0.1);
    }

    #[test]
    fn parse_unwraps_prose_and_escapes() {
        let raw = "Sure, here is the answer:\n{\"reason\": \"mentions \\\"World Cup\\\" venue\", \"anomaly_score\": 0.85}\nHope that helps.";
        let (reason, score) = parse_detection_response(raw).unwrap();
        assert_eq!(reason, "mentions \"World Cup\" venue");
        assert_eq!(score, 0.85);
    }

    #[test]
    fn out_of_range_score_is_format_violation_not_clamped() {
        let err =
            parse_detection_response(r#"{"reason":"x","anomaly_score":1.2}"#).unwrap_err();
        assert_eq!(err.kind, FailureKind::FormatViolation);
        let err =
            parse_detection_response(r#"{"reason":"x","anomaly_score":"high"}"#).unwrap_err();
        assert_eq!(err.kind, FailureKind::FormatViolation);
    }

    #[test]
    fn missing_pieces_are_malformed_output() {
        for raw in ["no json here", r#"{"reason":"x"}"#, r#"{"anomaly_score":0.2}"#] {
            let err = parse_detection_response(raw).unwrap_err();
            assert_eq!(err.kind, FailureKind::MalformedOutput, "input {raw:?}");
        }
    }

    #[test]
    fn classify_screens_loops_and_refusals_before_parsing() {
        let looping = ChatOutcome {
            text: "I am sorry but I keep going. ".repeat(40),
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        };
        assert_eq!(
            classify_outcome(&looping).unwrap_err().kind,
            FailureKind::RepetitionLoop
        );
        let refusal = ChatOutcome {
            text: "I'm sorry, but I can't assist with that request.".into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        };
        assert_eq!(
            classify_outcome(&refusal).unwrap_err().kind,
            FailureKind::SafetyRefusal
        );
    }
}

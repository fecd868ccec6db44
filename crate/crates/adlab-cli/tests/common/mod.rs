//! Shared fixture definitions for the test suite and the fixture
//! regenerator (`cargo test --test gen_fixtures -- --ignored`).

#![allow(dead_code)]

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use adlab::augment::KeywordGroup;
use adlab::corpus::{DatasetSpec, Sample, TextStats};
use adlab::modelsel::{AbstractSet, UmsContext};
use adlab::zeroshot::PromptContext;

pub const MODEL_ID: &str = "gpt-4o-mini";

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn adlab_bin() -> &'static str {
    env!("CARGO_BIN_EXE_adlab")
}

// ---------------------------------------------------------------------------
// AG News instantiation pinned by the golden prompt files.

pub fn ag_spec() -> DatasetSpec {
    DatasetSpec {
        name: "AG News".into(),
        original_task: "news topic classification".into(),
        normal_categories: vec!["Business".into(), "Sci/Tech".into(), "Sports".into()],
        anomaly_category: "World".into(),
        expected_train_size: None,
        expected_test_size: None,
    }
}

pub const GOLDEN_SAMPLE_TEXT: &str = "Shares of several technology companies rose sharply \
on Tuesday after a stronger-than-expected earnings report lifted the broader market.";

pub fn golden_keyword_group() -> KeywordGroup {
    KeywordGroup {
        category: "Business".into(),
        broad: "economy".into(),
        intermediate: "stock market".into(),
        fine: "quarterly earnings report".into(),
    }
}

pub fn ag_context(with_anomaly: bool) -> PromptContext {
    let spec = ag_spec();
    let anomaly = with_anomaly.then_some(spec.anomaly_category.as_str());
    PromptContext::from_names(&spec.normal_categories, anomaly)
}

// ---------------------------------------------------------------------------
// Model-selection fixture context. The replay store was recorded against
// exactly this context with placeholder abstracts, so it must stay stable.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UmsFixture {
    pub spec: DatasetSpec,
    pub size: usize,
    pub stats: TextStats,
    pub normal_example: Sample,
    pub anomaly_example: Sample,
}

pub fn ums_fixture() -> UmsFixture {
    UmsFixture {
        spec: ag_spec(),
        size: 32109,
        stats: TextStats {
            avg: 190.1,
            max: 959,
            min: 35,
            std: 61.7,
        },
        normal_example: Sample {
            id: "test:1".into(),
            text: GOLDEN_SAMPLE_TEXT.into(),
            category: "Business".into(),
            label: 0,
        },
        anomaly_example: Sample {
            id: "test:2".into(),
            text: "Delegates from more than forty countries gathered in Geneva on Monday \
to open a new round of talks on cross-border trade rules."
                .into(),
            category: "World".into(),
            label: 1,
        },
    }
}

pub fn ums_context(fixture: &UmsFixture) -> UmsContext {
    UmsContext {
        spec: fixture.spec.clone(),
        size: fixture.size,
        stats: fixture.stats,
        normal_example: fixture.normal_example.clone(),
        anomaly_example: fixture.anomaly_example.clone(),
        abstracts: AbstractSet::placeholders(),
    }
}

/// The 25 recorded selection answers, by vote count: OpenAI+LUNAR 11,
/// OpenAI+LOF 6, BERT+LUNAR 4, OpenAI+AE 3, BERT+LOF 1.
pub fn ums_choice_schedule() -> Vec<&'static str> {
    let mut choices = Vec::new();
    choices.extend(std::iter::repeat_n("OpenAI+LUNAR", 11));
    choices.extend(std::iter::repeat_n("OpenAI+LOF", 6));
    choices.extend(std::iter::repeat_n("BERT+LUNAR", 4));
    choices.extend(std::iter::repeat_n("OpenAI+AE", 3));
    choices.push("BERT+LOF");
    // Interleave deterministically so no prefix is single-valued.
    let mut out = vec![""; 25];
    let mut slot = 0usize;
    for choice in choices {
        out[slot % 25] = choice;
        slot += 7; // 7 and 25 are coprime: a full permutation
    }
    out
}

// ---------------------------------------------------------------------------
// Miniature dataset used by the end-to-end replay fixtures.

pub fn mini_spec() -> DatasetSpec {
    DatasetSpec {
        name: "mini-news".into(),
        original_task: "news categorization".into(),
        normal_categories: vec!["business".into(), "sports".into(), "technology".into()],
        anomaly_category: "science".into(),
        expected_train_size: Some(36),
        expected_test_size: Some(50),
    }
}

/// 1-based test line numbers holding anomalies (7 of 50).
pub const MINI_ANOMALY_LINES: [usize; 7] = [5, 12, 19, 26, 33, 40, 47];
/// Normal line answered with a repetition loop.
pub const MINI_REPETITION_LINE: usize = 8;
/// Normal line answered without any JSON object.
pub const MINI_MALFORMED_LINE: usize = 20;

pub fn mini_train_text(category: &str, i: usize) -> String {
    format!(
        "A routine {category} report, item {i}: correspondents summarize the week's \
{category} developments in plain language for a general audience."
    )
}

pub fn mini_test_text(line: usize) -> String {
    let category = mini_test_category(line);
    format!(
        "Dispatch {line}: today's {category} coverage reviews recent events and quotes \
two people familiar with the matter."
    )
}

pub fn mini_test_category(line: usize) -> &'static str {
    if MINI_ANOMALY_LINES.contains(&line) {
        "science"
    } else {
        match line % 3 {
            0 => "business",
            1 => "sports",
            _ => "technology",
        }
    }
}

/// The authored anomaly score for a test line, `None` for the two planted
/// failure lines.
pub fn mini_score(line: usize) -> Option<f64> {
    if line == MINI_REPETITION_LINE || line == MINI_MALFORMED_LINE {
        return None;
    }
    // Two missed anomalies and two suspicious normals keep the metrics away
    // from the degenerate 1.0.
    Some(match line {
        12 => 0.18,
        33 => 0.22,
        3 => 0.55,
        28 => 0.61,
        l if MINI_ANOMALY_LINES.contains(&l) => 0.72 + 0.02 * (l % 9) as f64,
        l => 0.08 + 0.015 * (l % 13) as f64,
    })
}

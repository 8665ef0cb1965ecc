//! Shared domain types: models, queries, evaluations, and predictions.

use crate::grade::Grade;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default output-token budget for reasoning models. Reasoning traces are
/// long, so these models get a generous cap by default.
pub const REASONING_TOKEN_CAP: u32 = 24_576;

/// Default output-token budget for non-reasoning models.
pub const DEFAULT_TOKEN_CAP: u32 = 4_096;

/// A model participating in the pipeline, as responder, judge, or both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    /// Stable identifier used in store records, registries, and reports.
    pub id: String,
    /// Human-facing name used in rendered report cards.
    pub display_name: String,
    /// Position in the cost ladder; lower is cheaper.
    pub cost_rank: u32,
    /// Whether the model emits an extended reasoning trace before its
    /// answer. Controls the default output-token budget.
    pub is_reasoning: bool,
    /// Maximum output tokens requested from the backend.
    pub max_output_tokens: u32,
}

impl ModelRef {
    /// Creates a model reference with the output-token budget implied by
    /// `is_reasoning` ([`REASONING_TOKEN_CAP`] or [`DEFAULT_TOKEN_CAP`]).
    pub fn new(id: impl Into<String>, cost_rank: u32, is_reasoning: bool) -> Self {
        let id = id.into();
        ModelRef {
            display_name: id.clone(),
            id,
            cost_rank,
            is_reasoning,
            max_output_tokens: default_token_cap(is_reasoning),
        }
    }
}

/// The default output-token budget for a model of the given kind.
pub fn default_token_cap(is_reasoning: bool) -> u32 {
    if is_reasoning {
        REASONING_TOKEN_CAP
    } else {
        DEFAULT_TOKEN_CAP
    }
}

/// A single query from an evaluation corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    /// Identifier, unique within a corpus.
    pub id: String,
    /// Label of the dataset this query belongs to.
    pub dataset: String,
    /// Optional finer-grained category within the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// The query text itself.
    #[serde(rename = "query")]
    pub text: String,
    /// Gold answer, when the dataset provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            dataset: dataset.into(),
            category: None,
            text: text.into(),
            reference_answer: None,
        }
    }
}

/// How responses are presented to the judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgingMode {
    /// All responses to a query are graded in one call, so the judge can
    /// compare them against each other.
    Combined,
    /// Each response is graded in its own call, in isolation.
    Independent,
}

impl fmt::Display for JudgingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JudgingMode::Combined => "combined",
            JudgingMode::Independent => "independent",
        })
    }
}

/// How a model is asked to predict its future grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// The model sees only the query.
    ZeroShot,
    /// The model also sees a rendered report card of its past grades.
    Contextual,
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionMode::ZeroShot => "zero_shot",
            PredictionMode::Contextual => "contextual",
        })
    }
}

/// A judge's verdict on one model's response to one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub query_id: String,
    /// The model whose response was graded.
    pub model: String,
    pub grade: Grade,
    /// The judge's justification. Always non-empty: the store rejects
    /// evaluations without one.
    pub rationale: String,
    pub judging_mode: JudgingMode,
    /// Identifier of the rubric template the judge was shown.
    pub rubric_id: String,
    /// The model that acted as judge.
    pub judge_model: String,
}

/// A model's pre-hoc guess at the grade the judge will assign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    /// The model whose future response is being predicted.
    pub model: String,
    pub predicted: Grade,
    pub prediction_mode: PredictionMode,
    /// The verbatim model output the grade was parsed from. Kept for
    /// debugging; not persisted in the record store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

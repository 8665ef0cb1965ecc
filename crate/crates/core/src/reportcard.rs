//! Per-model report cards: mode grades per dataset, rendered as feedback
//! text for contextual prediction prompts or exported as JSON.
//!
//! A card entry names a dataset (a "family" of queries), describes the kind
//! of work it involves, and records the judge's most frequent grade there
//! together with its support. Rendering comes in two variants — a long one
//! that explains each family and a short one that just lists verdicts — and
//! both uphold the grade-fidelity rule: each entry's grade token appears
//! exactly once in the rendered card, so a model reading its card can never
//! pick up stray grade tokens from the prose around the verdicts.

use crate::corpus::QueryIndex;
use crate::grade::{count_grade_tokens, Grade};
use crate::prompt::{Bindings, PromptError, TemplateSet};
use crate::scoreboard::{mode_score, RecordStore, ScoreboardError};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Which rendering of a report card to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CardVariant {
    /// Family descriptions, verdicts, and support counts, with guidance on
    /// how to weigh them.
    Long,
    /// One `dataset: grade` line per family.
    Short,
}

impl fmt::Display for CardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CardVariant::Long => "long",
            CardVariant::Short => "short",
        })
    }
}

impl FromStr for CardVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "long" => Ok(CardVariant::Long),
            "short" => Ok(CardVariant::Short),
            other => Err(format!("unknown card variant {other:?} (expected long or short)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportCardError {
    #[error("no graded evaluations for model {model:?} in the given scope")]
    NoData { model: String },
    #[error("dataset {dataset:?}: {detail} (grade tokens are reserved for verdicts)")]
    GradeTokenClash { dataset: String, detail: String },
    #[error("rendered card violates grade fidelity: expected {expected} grade tokens, found {found}")]
    GradeFidelity { expected: usize, found: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One dataset's verdict on a report card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardEntry {
    pub dataset: String,
    /// Prose description of the family of queries. Never contains a grade
    /// token; [`build_report_card`] rejects descriptions that do.
    pub description: String,
    pub grade: Grade,
    /// Number of evaluations behind the verdict.
    pub support: u64,
}

/// A model's report card: one entry per dataset, sorted by dataset label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCard {
    pub model: String,
    pub entries: Vec<CardEntry>,
    pub generated_at: DateTime<Utc>,
}

impl ReportCard {
    /// The card as a JSON value, for the export path and HTTP responses.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report cards always serialize")
    }
}

/// Prose descriptions of datasets, used for long-variant card entries.
/// Ships with defaults for well-known dataset labels and falls back to a
/// generic phrase for anything else.
#[derive(Debug, Clone)]
pub struct DatasetCatalog {
    descriptions: BTreeMap<String, String>,
}

impl Default for DatasetCatalog {
    fn default() -> Self {
        let mut descriptions = BTreeMap::new();
        for (label, description) in [
            (
                "medqa",
                "clinical medicine questions in the style of professional medical board exams",
            ),
            (
                "longfact",
                "open-ended prompts asking for long, factually dense write-ups about people and topics",
            ),
            (
                "aime",
                "competition mathematics problems that demand an exact numeric answer",
            ),
            (
                "scicode",
                "programming tasks implementing scientific computations from research problem statements",
            ),
            (
                "mmlu_pro",
                "exam-style multiple-choice questions across many academic and professional subjects",
            ),
        ] {
            descriptions.insert(label.to_string(), description.to_string());
        }
        DatasetCatalog { descriptions }
    }
}

impl DatasetCatalog {
    /// Adds or overrides descriptions on top of the defaults.
    pub fn with_overrides(overrides: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut catalog = DatasetCatalog::default();
        for (label, description) in overrides {
            catalog.descriptions.insert(label, description);
        }
        catalog
    }

    pub fn describe(&self, dataset: &str) -> String {
        self.descriptions
            .get(dataset)
            .cloned()
            .unwrap_or_else(|| format!("queries from the {dataset} collection"))
    }

    /// Description for a category entry. Category labels share the override
    /// namespace with dataset labels, so a config can describe either; the
    /// fallback names both the category and its parent dataset.
    pub fn describe_category(&self, dataset: &str, category: &str) -> String {
        self.descriptions
            .get(category)
            .cloned()
            .unwrap_or_else(|| format!("{category} questions from the {dataset} collection"))
    }
}

fn reject_grade_tokens(dataset: &str, what: &str, text: &str) -> Result<(), ReportCardError> {
    for grade in Grade::ALL {
        if count_grade_tokens(text, grade) > 0 {
            return Err(ReportCardError::GradeTokenClash {
                dataset: dataset.to_string(),
                detail: format!("{what} {text:?} contains the grade token {:?}", grade.token()),
            });
        }
    }
    Ok(())
}

/// Builds a model's report card from the store.
///
/// One entry is produced per listed dataset that has at least one matching
/// evaluation in scope (datasets without data are skipped); a card with no
/// entries at all is an error. Pass the training-split id set as `restrict`
/// to keep held-out queries from leaking into the card. `generated_at` is
/// taken as a parameter so a rebuilt card can be byte-identical.
pub fn build_report_card(
    store: &RecordStore,
    index: &QueryIndex,
    model: &str,
    datasets: &[String],
    catalog: &DatasetCatalog,
    restrict: Option<&HashSet<String>>,
    generated_at: DateTime<Utc>,
) -> Result<ReportCard, ReportCardError> {
    let mut labels: Vec<&String> = datasets.iter().collect();
    labels.sort();
    labels.dedup();
    let mut entries = Vec::new();
    for dataset in labels {
        match mode_score(store, index, model, dataset, None, restrict) {
            Ok(score) => {
                let description = catalog.describe(dataset);
                reject_grade_tokens(dataset, "dataset label", dataset)?;
                reject_grade_tokens(dataset, "description", &description)?;
                entries.push(CardEntry {
                    dataset: dataset.clone(),
                    description,
                    grade: score.grade,
                    support: score.support,
                });
            }
            Err(ScoreboardError::NoEvaluations { .. }) => continue,
        }
    }
    if entries.is_empty() {
        return Err(ReportCardError::NoData {
            model: model.to_string(),
        });
    }
    Ok(ReportCard {
        model: model.to_string(),
        entries,
        generated_at,
    })
}

/// Builds a report card with one entry per category of a single dataset,
/// for corpora whose datasets span many subjects (each entry's family label
/// is the category rather than the dataset). Same contract as
/// [`build_report_card`] otherwise: categories without in-scope evaluations
/// are skipped, an entirely empty card is an error, and labels and
/// descriptions must not contain grade tokens.
pub fn build_category_report_card(
    store: &RecordStore,
    index: &QueryIndex,
    model: &str,
    dataset: &str,
    categories: &[String],
    catalog: &DatasetCatalog,
    restrict: Option<&HashSet<String>>,
    generated_at: DateTime<Utc>,
) -> Result<ReportCard, ReportCardError> {
    let mut labels: Vec<&String> = categories.iter().collect();
    labels.sort();
    labels.dedup();
    let mut entries = Vec::new();
    for category in labels {
        match mode_score(store, index, model, dataset, Some(category), restrict) {
            Ok(score) => {
                let description = catalog.describe_category(dataset, category);
                reject_grade_tokens(category, "category label", category)?;
                reject_grade_tokens(category, "description", &description)?;
                entries.push(CardEntry {
                    dataset: category.clone(),
                    description,
                    grade: score.grade,
                    support: score.support,
                });
            }
            Err(ScoreboardError::NoEvaluations { .. }) => continue,
        }
    }
    if entries.is_empty() {
        return Err(ReportCardError::NoData {
            model: model.to_string(),
        });
    }
    Ok(ReportCard {
        model: model.to_string(),
        entries,
        generated_at,
    })
}

fn format_entries(card: &ReportCard, variant: CardVariant) -> String {
    let lines: Vec<String> = card
        .entries
        .iter()
        .map(|e| match variant {
            CardVariant::Long => format!(
                "- {} ({}): most frequent judge verdict: {}, backed by {} graded responses",
                e.dataset, e.description, e.grade, e.support
            ),
            CardVariant::Short => format!("{}: {}", e.dataset, e.grade),
        })
        .collect();
    lines.join("\n")
}

/// Renders a card through the long or short feedback template and checks
/// grade fidelity: the output must contain exactly one grade token per
/// entry, no matter what template text is in use.
pub fn render_report_card(
    card: &ReportCard,
    variant: CardVariant,
    templates: &TemplateSet,
) -> Result<String, ReportCardError> {
    let template_id = match variant {
        CardVariant::Long => "long_feedback",
        CardVariant::Short => "short_feedback",
    };
    let rendered = templates.render(
        template_id,
        &Bindings::new()
            .with("model", &card.model)
            .with("entries", format_entries(card, variant)),
    )?;
    let expected = card.entries.len();
    let found: usize = Grade::ALL
        .into_iter()
        .map(|g| count_grade_tokens(&rendered, g))
        .sum();
    if found != expected {
        return Err(ReportCardError::GradeFidelity { expected, found });
    }
    Ok(rendered)
}

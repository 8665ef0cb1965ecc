//! Hindsight relabeling: exporting judge grades as fine-tuning data.
//!
//! For every training-split query a model was graded on, one SFT example
//! is produced whose user turn is the zero-shot prediction prompt —
//! byte-identical to the one used at prediction time, via the shared
//! renderer — and whose assistant turn is exactly the grade token the
//! judge actually assigned. Training on these teaches the model to answer
//! the prediction question the way the judge would have. Test-split
//! queries never appear, so prediction metrics on the held-out set stay
//! honest.

use crate::backend::ChatMessage;
use crate::corpus::{Corpus, Split};
use crate::predictor::render_zero_shot_prompt;
use crate::prompt::{Bindings, PromptError, TemplateSet};
use crate::scoreboard::{latest_evaluations, RecordStore};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HindsightError {
    #[error("split lists query {0:?} but the corpus does not contain it")]
    MissingQuery(String),
    #[error("no SFT records to export (no training query has an evaluation)")]
    EmptyDataset,
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One fine-tuning example in chat-messages form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<ChatMessage>,
}

/// Builds the hindsight SFT dataset for one model.
///
/// Iterates the training split in split order and emits one record per
/// train query whose latest evaluation of `model` exists in the store.
/// Test queries are never consulted. The user turn reuses
/// [`render_zero_shot_prompt`], so it is byte-identical to the prompt the
/// model saw (or would see) when predicting; the assistant turn is the
/// judge's grade token and nothing else.
pub fn build_sft_dataset(
    store: &RecordStore,
    corpus: &Corpus,
    model: &str,
    split: &Split,
    templates: &TemplateSet,
) -> Result<Vec<SftRecord>, HindsightError> {
    let train_ids = split.train_set();
    let latest = latest_evaluations(store, Some(&train_ids));
    let system = templates.render("responder_system", &Bindings::new())?;
    let mut records = Vec::new();
    for query_id in &split.train {
        let query = corpus
            .get(query_id)
            .ok_or_else(|| HindsightError::MissingQuery(query_id.clone()))?;
        let Some(evaluation) = latest.get(&(query_id.clone(), model.to_string())) else {
            continue;
        };
        let prompt = render_zero_shot_prompt(templates, query)?;
        records.push(SftRecord {
            messages: vec![
                ChatMessage::system(&system),
                ChatMessage::user(prompt),
                ChatMessage::assistant(evaluation.grade.token()),
            ],
        });
    }
    Ok(records)
}

/// Writes SFT records as JSONL, one `{"messages": [...]}` object per line.
/// An empty dataset is an error: exporting nothing is always a mistake.
pub fn export_sft(records: &[SftRecord], path: impl AsRef<Path>) -> Result<(), HindsightError> {
    if records.is_empty() {
        return Err(HindsightError::EmptyDataset);
    }
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("SFT records always serialize"));
        out.push('\n');
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|source| HindsightError::Io {
        path: path.display().to_string(),
        source,
    })
}

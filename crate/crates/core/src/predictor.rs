//! Pre-hoc grade prediction: asking a model which grade the judge will
//! give its future response, before any response is generated.
//!
//! Two strategies exist behind the [`PredictionStrategy`] trait. Zero-shot
//! shows the model only the query; contextual additionally embeds a
//! rendered report card of the model's past grades, verbatim. Either way
//! the model must end its output with a single grade token; output that
//! does not parse earns exactly one correction request, so a prediction
//! never costs more than two backend calls.

use crate::backend::{BackendError, ChatBackend, ChatMessage};
use crate::grade::{parse_grade, GradeParseError};
use crate::prompt::{Bindings, PromptError, TemplateSet};
use crate::registry::Registry;
use crate::types::{ModelRef, Prediction, PredictionMode, Query};
use async_trait::async_trait;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    /// The model's output still had no parseable grade after the one
    /// allowed correction round.
    #[error("prediction by {model:?} unparseable even after correction: {last}")]
    Unparseable {
        model: String,
        #[source]
        last: GradeParseError,
        /// The verbatim final model output, for debugging.
        raw: String,
    },
    #[error("no report card available for model {model:?}")]
    NoCard { model: String },
    #[error("no backend registered for model {model:?}")]
    NoBackend { model: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Renders the zero-shot prediction prompt for a query. Shared with the
/// hindsight exporter, which must reproduce this text byte for byte.
pub fn render_zero_shot_prompt(
    templates: &TemplateSet,
    query: &Query,
) -> Result<String, PromptError> {
    templates.render(
        "zero_shot_prediction",
        &Bindings::new().with("query", &query.text),
    )
}

/// Renders the contextual prediction prompt: the zero-shot task plus the
/// rendered report card, embedded verbatim.
pub fn render_contextual_prompt(
    templates: &TemplateSet,
    query: &Query,
    card_text: &str,
) -> Result<String, PromptError> {
    templates.render(
        "contextual_prediction",
        &Bindings::new()
            .with("query", &query.text)
            .with("report_card", card_text),
    )
}

/// Sends a prediction prompt and parses the grade, with one correction
/// round on a parse failure. `model` names the model whose grade is being
/// predicted, which is normally — but not necessarily — the backend model.
async fn predict_with_prompt(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    prompt: &str,
    model: &str,
    query_id: &str,
    mode: PredictionMode,
) -> Result<Prediction, PredictorError> {
    let system = templates.render("responder_system", &Bindings::new())?;
    let raw = backend
        .chat(&[ChatMessage::system(&system), ChatMessage::user(prompt)])
        .await?;
    let (grade, raw) = match parse_grade(&raw) {
        Ok(grade) => (grade, raw),
        Err(_) => {
            let correction = templates.render(
                "prediction_correction",
                &Bindings::new().with("original", &raw),
            )?;
            let raw2 = backend
                .chat(&[ChatMessage::system(&system), ChatMessage::user(correction)])
                .await?;
            match parse_grade(&raw2) {
                Ok(grade) => (grade, raw2),
                Err(last) => {
                    return Err(PredictorError::Unparseable {
                        model: model.to_string(),
                        last,
                        raw: raw2,
                    })
                }
            }
        }
    };
    Ok(Prediction {
        query_id: query_id.to_string(),
        model: model.to_string(),
        predicted: grade,
        prediction_mode: mode,
        raw_text: Some(raw),
    })
}

/// Asks `backend` for a zero-shot grade prediction for `model` on `query`.
pub async fn predict_zero_shot(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    model: &str,
    query: &Query,
) -> Result<Prediction, PredictorError> {
    let prompt = render_zero_shot_prompt(templates, query)?;
    predict_with_prompt(
        backend,
        templates,
        &prompt,
        model,
        &query.id,
        PredictionMode::ZeroShot,
    )
    .await
}

/// Asks `backend` for a contextual grade prediction for `model` on
/// `query`, conditioned on `card_text` (a rendered report card belonging
/// to the model being predicted).
pub async fn predict_contextual(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    model: &str,
    query: &Query,
    card_text: &str,
) -> Result<Prediction, PredictorError> {
    let prompt = render_contextual_prompt(templates, query, card_text)?;
    predict_with_prompt(
        backend,
        templates,
        &prompt,
        model,
        &query.id,
        PredictionMode::Contextual,
    )
    .await
}

/// Everything a prediction strategy needs besides the model and query.
pub struct PredictContext<'a> {
    pub templates: &'a TemplateSet,
    pub backends: &'a Registry<dyn ChatBackend>,
    /// Rendered report card text per model id. Only consulted by
    /// card-conditioned strategies; may be empty otherwise.
    pub cards: &'a BTreeMap<String, String>,
}

impl PredictContext<'_> {
    fn backend_for(&self, model: &ModelRef) -> Result<Arc<dyn ChatBackend>, PredictorError> {
        self.backends
            .get(&model.id)
            .ok_or_else(|| PredictorError::NoBackend {
                model: model.id.clone(),
            })
    }
}

/// A pluggable way of predicting the judge's grade for a model on a query.
#[async_trait]
pub trait PredictionStrategy: Send + Sync {
    /// Registry name of this strategy.
    fn name(&self) -> &'static str;
    fn mode(&self) -> PredictionMode;

    async fn predict(
        &self,
        ctx: &PredictContext<'_>,
        model: &ModelRef,
        query: &Query,
    ) -> Result<Prediction, PredictorError>;
}

/// Prediction from the query alone.
pub struct ZeroShotPrediction;

/// Prediction conditioned on the model's rendered report card.
pub struct ContextualPrediction;

#[async_trait]
impl PredictionStrategy for ZeroShotPrediction {
    fn name(&self) -> &'static str {
        "zero_shot"
    }

    fn mode(&self) -> PredictionMode {
        PredictionMode::ZeroShot
    }

    async fn predict(
        &self,
        ctx: &PredictContext<'_>,
        model: &ModelRef,
        query: &Query,
    ) -> Result<Prediction, PredictorError> {
        let backend = ctx.backend_for(model)?;
        predict_zero_shot(backend.as_ref(), ctx.templates, &model.id, query).await
    }
}

#[async_trait]
impl PredictionStrategy for ContextualPrediction {
    fn name(&self) -> &'static str {
        "contextual"
    }

    fn mode(&self) -> PredictionMode {
        PredictionMode::Contextual
    }

    async fn predict(
        &self,
        ctx: &PredictContext<'_>,
        model: &ModelRef,
        query: &Query,
    ) -> Result<Prediction, PredictorError> {
        let backend = ctx.backend_for(model)?;
        let card_text = ctx.cards.get(&model.id).ok_or_else(|| PredictorError::NoCard {
            model: model.id.clone(),
        })?;
        predict_contextual(backend.as_ref(), ctx.templates, &model.id, query, card_text).await
    }
}

/// The built-in prediction strategies, keyed by name.
pub fn prediction_registry() -> Registry<dyn PredictionStrategy> {
    let mut registry: Registry<dyn PredictionStrategy> = Registry::new("prediction strategy");
    registry
        .register("zero_shot", Arc::new(ZeroShotPrediction))
        .expect("fresh registry");
    registry
        .register("contextual", Arc::new(ContextualPrediction))
        .expect("fresh registry");
    registry
}

//! Cost-aware routing: send each query to the cheapest model that predicts
//! it will do an acceptable job.
//!
//! A [`Ladder`] is a list of models in strictly increasing cost order plus
//! an acceptance threshold (`ok` or `great`; `bad` would accept anything
//! and is rejected). Routing walks the ladder from cheap to expensive,
//! asks each model to predict its own grade for the query, and stops at
//! the first prediction at or above the threshold. A failed prediction is
//! treated as below-threshold and the walk continues. If nothing
//! qualifies, the query falls back to the most expensive model — the best
//! remaining bet. The full trail of consulted models is recorded for
//! auditing, so prediction spend is always visible.

use crate::backend::{BackendError, ChatBackend, ChatMessage};
use crate::grade::Grade;
use crate::predictor::PredictorError;
use crate::prompt::{Bindings, PromptError, TemplateSet};
use crate::registry::Registry;
use crate::scoreboard::{RoutingRecord, RoutingTrailEntry};
use crate::types::{ModelRef, Query};
use async_trait::async_trait;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("a routing ladder needs at least one model")]
    EmptyLadder,
    #[error("models {first:?} and {second:?} share cost rank {rank}; ladder order must be strict")]
    DuplicateCostRank {
        rank: u32,
        first: String,
        second: String,
    },
    #[error("routing threshold must be ok or great, not {0}")]
    BadThreshold(Grade),
    #[error("no backend registered for routed model {0:?}")]
    NoBackend(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    /// The routed model failed to answer. Carries the decision so the
    /// caller can still audit the trail (and see whether every prediction
    /// on it failed too).
    #[error("routed model {model:?} failed to answer: {source}")]
    AnswerFailed {
        model: String,
        decision: RoutingDecision,
        #[source]
        source: BackendError,
    },
}

/// A cost-ordered model ladder with an acceptance threshold.
#[derive(Debug, Clone)]
pub struct Ladder {
    models: Vec<ModelRef>,
    threshold: Grade,
}

impl Ladder {
    /// Builds a ladder, sorting the models by `cost_rank` and rejecting
    /// duplicate ranks (cheapest-first order must be unambiguous) and the
    /// `bad` threshold (which would accept every prediction).
    pub fn new(mut models: Vec<ModelRef>, threshold: Grade) -> Result<Self, RouterError> {
        if models.is_empty() {
            return Err(RouterError::EmptyLadder);
        }
        if threshold == Grade::Bad {
            return Err(RouterError::BadThreshold(threshold));
        }
        models.sort_by_key(|m| m.cost_rank);
        for pair in models.windows(2) {
            if pair[0].cost_rank == pair[1].cost_rank {
                return Err(RouterError::DuplicateCostRank {
                    rank: pair[0].cost_rank,
                    first: pair[0].id.clone(),
                    second: pair[1].id.clone(),
                });
            }
        }
        Ok(Ladder { models, threshold })
    }

    /// Models in cheapest-first order.
    pub fn models(&self) -> &[ModelRef] {
        &self.models
    }

    pub fn threshold(&self) -> Grade {
        self.threshold
    }
}

/// The outcome of routing one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub chosen: ModelRef,
    /// The prediction that selected the chosen model. `None` only when
    /// the walk fell back and the last rung's prediction itself failed.
    pub predicted: Option<Grade>,
    /// One entry per consulted model, in ladder order. Its length is the
    /// prediction cost of this decision.
    pub trail: Vec<RoutingTrailEntry>,
    pub fallback: bool,
}

impl RoutingDecision {
    /// True when not a single rung produced a prediction.
    pub fn all_predictions_failed(&self) -> bool {
        self.trail.iter().all(|t| t.error.is_some())
    }

    /// The decision in store-record form.
    pub fn to_record(&self, query_id: impl Into<String>) -> RoutingRecord {
        RoutingRecord {
            query_id: query_id.into(),
            chosen: self.chosen.id.clone(),
            predicted: self.predicted,
            trail: self.trail.clone(),
            fallback: self.fallback,
        }
    }
}

/// The prediction source the router consults. Implemented by the pipeline
/// on top of a prediction strategy; tests script it directly.
#[async_trait]
pub trait RoutePredictor: Send + Sync {
    async fn predict_grade(&self, model: &ModelRef, query: &Query)
        -> Result<Grade, PredictorError>;
}

/// Walks the ladder and decides where to send the query. Infallible by
/// construction: even if every prediction errors, the decision falls back
/// to the last rung (with the failures on the trail).
pub async fn decide(
    query: &Query,
    ladder: &Ladder,
    predictor: &dyn RoutePredictor,
) -> RoutingDecision {
    let mut trail: Vec<RoutingTrailEntry> = Vec::new();
    for model in ladder.models() {
        match predictor.predict_grade(model, query).await {
            Ok(grade) => {
                trail.push(RoutingTrailEntry {
                    model: model.id.clone(),
                    predicted: Some(grade),
                    error: None,
                });
                if grade >= ladder.threshold() {
                    return RoutingDecision {
                        chosen: model.clone(),
                        predicted: Some(grade),
                        trail,
                        fallback: false,
                    };
                }
            }
            Err(err) => {
                // A model that cannot predict is treated as predicting
                // below the threshold; the walk moves on.
                trail.push(RoutingTrailEntry {
                    model: model.id.clone(),
                    predicted: None,
                    error: Some(err.to_string()),
                });
            }
        }
    }
    let last = ladder
        .models()
        .last()
        .expect("ladder is never empty")
        .clone();
    let predicted = trail.last().and_then(|t| t.predicted);
    RoutingDecision {
        chosen: last,
        predicted,
        trail,
        fallback: true,
    }
}

/// Sends the query to the decision's chosen model and returns its answer.
pub async fn answer(
    query: &Query,
    decision: &RoutingDecision,
    backends: &Registry<dyn ChatBackend>,
    templates: &TemplateSet,
) -> Result<String, RouterError> {
    let backend = backends
        .get(&decision.chosen.id)
        .ok_or_else(|| RouterError::NoBackend(decision.chosen.id.clone()))?;
    let system = templates.render("responder_system", &Bindings::new())?;
    backend
        .chat(&[ChatMessage::system(&system), ChatMessage::user(&query.text)])
        .await
        .map_err(|source| RouterError::AnswerFailed {
            model: decision.chosen.id.clone(),
            decision: decision.clone(),
            source,
        })
}

/// Convenience: decide, then answer. Returns the answer text along with
/// the decision for recording.
pub async fn route(
    query: &Query,
    ladder: &Ladder,
    predictor: &dyn RoutePredictor,
    backends: &Registry<dyn ChatBackend>,
    templates: &TemplateSet,
) -> Result<(String, RoutingDecision), RouterError> {
    let decision = decide(query, ladder, predictor).await;
    let text = answer(query, &decision, backends, templates).await?;
    Ok((text, decision))
}

//! End-to-end orchestration: one [`Pipeline`] owns the configured fleet,
//! templates, and record store, and drives the batch stages (collect and
//! grade, predict, export) plus live routing.
//!
//! Batch stages walk the corpus in file order and append to the store as
//! they go, so a crashed run leaves a valid prefix behind. Per-query
//! trouble (every backend down, an unparseable verdict after correction)
//! is counted and reported in the stage summary instead of aborting the
//! whole run.

use crate::backend::{collect_responses, ChatBackend, CollectError};
use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{load_corpus, split_corpus, Corpus, CorpusError, QueryIndex, Split};
use crate::grade::Grade;
use crate::hindsight::{build_sft_dataset, export_sft, HindsightError};
use crate::judge::{judging_registry, JudgeContext, JudgeError, JudgingStrategy};
use crate::predictor::{
    prediction_registry, PredictContext, PredictionStrategy, PredictorError,
};
use crate::prompt::{Bindings, PromptError, TemplateSet};
use crate::registry::{Registry, RegistryError};
use crate::reportcard::{
    build_report_card, render_report_card, CardVariant, ReportCardError,
};
use crate::router::{decide, Ladder, RoutePredictor, RouterError, RoutingDecision};
use crate::rng::fnv1a64;
use crate::scoreboard::{Record, RecordStore, StoreError};
use crate::types::{JudgingMode, ModelRef, PredictionMode, Query};
use async_trait::async_trait;
use chrono::{DateTime, Utc};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    ReportCard(#[from] ReportCardError),
    #[error(transparent)]
    Hindsight(#[from] HindsightError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("this operation needs a corpus; set `corpus` in the config")]
    NoCorpus,
}

/// Which part of the corpus a batch stage covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScope {
    All,
    Train,
    Test,
}

impl SplitScope {
    /// The id set to restrict to, or `None` for the whole corpus.
    pub fn restrict(&self, split: &Split) -> Option<HashSet<String>> {
        match self {
            SplitScope::All => None,
            SplitScope::Train => Some(split.train_set()),
            SplitScope::Test => Some(split.test_set()),
        }
    }
}

impl std::str::FromStr for SplitScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SplitScope::All),
            "train" => Ok(SplitScope::Train),
            "test" => Ok(SplitScope::Test),
            other => Err(format!("unknown split scope {other:?} (expected all, train, or test)")),
        }
    }
}

/// What a grading run did.
#[derive(Debug, Default)]
pub struct EvaluateSummary {
    pub queries_seen: usize,
    pub evaluations_recorded: usize,
    /// Individual models that failed to answer (the query still went to
    /// the judge with the responses that did arrive).
    pub response_failures: usize,
    /// Queries that produced no evaluations at all, with the reason.
    pub failed_queries: Vec<(String, String)>,
}

/// What a prediction run did.
#[derive(Debug, Default)]
pub struct PredictSummary {
    pub predictions_recorded: usize,
    /// (model, query, reason) for predictions that never parsed.
    pub failures: Vec<(String, String, String)>,
}

/// The assembled system: configuration plus everything built from it.
pub struct Pipeline {
    config: PipelineConfig,
    templates: Arc<TemplateSet>,
    backends: Arc<Registry<dyn ChatBackend>>,
    store: Arc<RecordStore>,
    judging: Registry<dyn JudgingStrategy>,
    prediction: Registry<dyn PredictionStrategy>,
}

impl Pipeline {
    /// Builds the pipeline, opening (and replaying) the record store.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        let templates = Arc::new(config.templates()?);
        let backends = Arc::new(config.backends()?);
        let store = Arc::new(RecordStore::open(&config.store)?);
        Ok(Pipeline {
            config,
            templates,
            backends,
            store,
            judging: judging_registry(),
            prediction: prediction_registry(),
        })
    }

    /// As [`from_config`](Self::from_config), but with an in-memory store
    /// (for tests and dry runs).
    pub fn in_memory(config: PipelineConfig) -> Result<Self, PipelineError> {
        let templates = Arc::new(config.templates()?);
        let backends = Arc::new(config.backends()?);
        Ok(Pipeline {
            config,
            templates,
            backends,
            store: Arc::new(RecordStore::in_memory()),
            judging: judging_registry(),
            prediction: prediction_registry(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<RecordStore> {
        &self.store
    }

    pub fn templates(&self) -> &Arc<TemplateSet> {
        &self.templates
    }

    pub fn backends(&self) -> &Arc<Registry<dyn ChatBackend>> {
        &self.backends
    }

    /// Loads the configured corpus.
    pub fn load_corpus(&self) -> Result<Corpus, PipelineError> {
        let path = self.config.corpus.as_ref().ok_or(PipelineError::NoCorpus)?;
        Ok(load_corpus(path)?)
    }

    /// The train/test split at the configured seed and ratio.
    pub fn split(&self, corpus: &Corpus) -> Result<Split, PipelineError> {
        Ok(split_corpus(corpus, self.config.split_seed, self.config.split_ratio)?)
    }

    fn judge_backend(&self) -> Result<Arc<dyn ChatBackend>, PipelineError> {
        Ok(self.backends.expect(&self.config.judge.model)?)
    }

    /// Collects responses from the routed fleet and grades them, appending
    /// one evaluation record per (query, model) that the judge graded.
    pub async fn run_evaluate(
        &self,
        corpus: &Corpus,
        mode: JudgingMode,
    ) -> Result<EvaluateSummary, PipelineError> {
        let strategy = self.judging.expect(&mode.to_string())?;
        let judge = self.judge_backend()?;
        let responders = self.config.routed_refs();
        let system = self.templates.render("responder_system", &Bindings::new())?;
        let ctx = JudgeContext {
            judge: judge.as_ref(),
            templates: &self.templates,
            rubric_id: &self.config.rubric,
            // The run seed doubles as the label-shuffle seed, so reruns
            // anonymize identically.
            label_seed: self.config.split_seed,
        };
        let mut summary = EvaluateSummary::default();
        for query in corpus.queries() {
            summary.queries_seen += 1;
            let collected = match collect_responses(
                query,
                &responders,
                &self.backends,
                &system,
                self.config.parallelism,
            )
            .await
            {
                Ok(collected) => collected,
                Err(CollectError::AllBackendsFailed { failures, .. }) => {
                    summary.response_failures += failures.len();
                    summary
                        .failed_queries
                        .push((query.id.clone(), "no model answered".into()));
                    continue;
                }
            };
            summary.response_failures += collected.failures.len();
            match strategy.evaluate_query(&ctx, query, &collected.responses).await {
                Ok(evaluations) => {
                    for evaluation in evaluations {
                        self.store.append(Record::Evaluation(evaluation))?;
                        summary.evaluations_recorded += 1;
                    }
                }
                Err(err) => {
                    summary.failed_queries.push((query.id.clone(), err.to_string()));
                }
            }
        }
        Ok(summary)
    }

    /// Renders one report card per routed model from the store, keyed by
    /// model id. Models with no graded responses in scope are skipped.
    /// `restrict` scopes the aggregation (pass the train set to keep test
    /// queries out of the cards).
    pub fn build_cards(
        &self,
        corpus: &Corpus,
        restrict: Option<&HashSet<String>>,
        variant: CardVariant,
        generated_at: DateTime<Utc>,
    ) -> Result<BTreeMap<String, String>, PipelineError> {
        let index = QueryIndex::from_corpus(corpus);
        let datasets = corpus.datasets();
        let catalog = self.config.catalog();
        let mut cards = BTreeMap::new();
        for model in self.config.routed_refs() {
            let card = match build_report_card(
                &self.store,
                &index,
                &model.id,
                &datasets,
                &catalog,
                restrict,
                generated_at,
            ) {
                Ok(card) => card,
                Err(ReportCardError::NoData { .. }) => continue,
                Err(err) => return Err(err.into()),
            };
            cards.insert(model.id.clone(), render_report_card(&card, variant, &self.templates)?);
        }
        Ok(cards)
    }

    /// Predicts judge grades for every routed model over the scoped part
    /// of the corpus, appending one prediction record per parsed
    /// prediction. Contextual prediction feeds each model its own report
    /// card built from train-split evaluations only.
    pub async fn run_predict(
        &self,
        corpus: &Corpus,
        mode: PredictionMode,
        scope: SplitScope,
    ) -> Result<PredictSummary, PipelineError> {
        let strategy = self.prediction.expect(&mode.to_string())?;
        let cards = match mode {
            PredictionMode::Contextual => {
                let split = self.split(corpus)?;
                self.build_cards(
                    corpus,
                    Some(&split.train_set()),
                    self.config.card_variant,
                    Utc::now(),
                )?
            }
            PredictionMode::ZeroShot => BTreeMap::new(),
        };
        let ctx = PredictContext {
            templates: &self.templates,
            backends: &self.backends,
            cards: &cards,
        };
        let restrict = match scope {
            SplitScope::All => None,
            _ => scope.restrict(&self.split(corpus)?),
        };
        let mut models = self.config.routed_refs();
        models.sort_by(|a, b| a.id.cmp(&b.id));
        let mut summary = PredictSummary::default();
        for model in &models {
            for query in corpus.queries() {
                if let Some(ids) = &restrict {
                    if !ids.contains(&query.id) {
                        continue;
                    }
                }
                match strategy.predict(&ctx, model, query).await {
                    Ok(prediction) => {
                        self.store.append(Record::Prediction(prediction))?;
                        summary.predictions_recorded += 1;
                    }
                    Err(err) => {
                        summary
                            .failures
                            .push((model.id.clone(), query.id.clone(), err.to_string()));
                    }
                }
            }
        }
        Ok(summary)
    }

    /// Exports the hindsight-relabeled SFT dataset for one model to a
    /// JSONL file and returns how many examples were written.
    pub fn run_export_sft(
        &self,
        corpus: &Corpus,
        model: &str,
        path: impl AsRef<Path>,
    ) -> Result<usize, PipelineError> {
        let split = self.split(corpus)?;
        let records = build_sft_dataset(&self.store, corpus, model, &split, &self.templates)?;
        export_sft(&records, path)?;
        Ok(records.len())
    }

    /// Builds the live router. Contextual routing renders report cards up
    /// front from the train-split evaluations in the store — the same scope
    /// the scoreboard uses, so live cards match the offline ones. Without a
    /// corpus (or without graded history) the card map is empty and
    /// card-conditioned predictions fail soft, which routing treats as
    /// below-threshold.
    pub fn router(&self) -> Result<LiveRouter, PipelineError> {
        let ladder = self.config.ladder()?;
        let strategy = self.prediction.expect(&self.config.prediction_mode.to_string())?;
        let cards = match self.config.prediction_mode {
            PredictionMode::Contextual if self.config.corpus.is_some() => {
                let corpus = self.load_corpus()?;
                let split = self.split(&corpus)?;
                self.build_cards(
                    &corpus,
                    Some(&split.train_set()),
                    self.config.card_variant,
                    Utc::now(),
                )?
            }
            _ => BTreeMap::new(),
        };
        Ok(LiveRouter {
            ladder,
            predictor: StrategyPredictor {
                strategy,
                templates: Arc::clone(&self.templates),
                backends: Arc::clone(&self.backends),
                cards: Arc::new(cards),
            },
            backends: Arc::clone(&self.backends),
            templates: Arc::clone(&self.templates),
            store: Arc::clone(&self.store),
            live_dataset: self.config.live_dataset.clone(),
            counter: AtomicU64::new(1),
        })
    }
}

/// Adapts a prediction strategy to the router's predictor interface.
struct StrategyPredictor {
    strategy: Arc<dyn PredictionStrategy>,
    templates: Arc<TemplateSet>,
    backends: Arc<Registry<dyn ChatBackend>>,
    cards: Arc<BTreeMap<String, String>>,
}

#[async_trait]
impl RoutePredictor for StrategyPredictor {
    async fn predict_grade(
        &self,
        model: &ModelRef,
        query: &Query,
    ) -> Result<Grade, PredictorError> {
        let ctx = PredictContext {
            templates: &self.templates,
            backends: &self.backends,
            cards: &self.cards,
        };
        Ok(self.strategy.predict(&ctx, model, query).await?.predicted)
    }
}

/// One routed answer, with its audit trail.
#[derive(Debug)]
pub struct RoutedReply {
    pub query_id: String,
    pub answer: String,
    pub decision: RoutingDecision,
    /// Sequence number of the routing record in the store.
    pub seq: u64,
}

/// Long-lived routing front end, shared by the CLI and the gateway.
pub struct LiveRouter {
    ladder: Ladder,
    predictor: StrategyPredictor,
    backends: Arc<Registry<dyn ChatBackend>>,
    templates: Arc<TemplateSet>,
    store: Arc<RecordStore>,
    live_dataset: String,
    counter: AtomicU64,
}

impl LiveRouter {
    pub fn ladder(&self) -> &Ladder {
        &self.ladder
    }

    /// Routes one live query: decide, record the decision, then answer
    /// with the chosen model. The routing record is appended before the
    /// answer call, so even a failed answer leaves an audit trail.
    pub async fn route(
        &self,
        text: &str,
        dataset: Option<&str>,
    ) -> Result<RoutedReply, PipelineError> {
        let serial = self.counter.fetch_add(1, Ordering::Relaxed);
        let query_id = format!("live-{serial:06}-{:016x}", fnv1a64(text.as_bytes()));
        let query = Query::new(
            &query_id,
            dataset.unwrap_or(&self.live_dataset),
            text,
        );
        let decision = decide(&query, &self.ladder, &self.predictor).await;
        let seq = self.store.append(Record::Routing(decision.to_record(&query_id)))?;
        let answer =
            crate::router::answer(&query, &decision, &self.backends, &self.templates).await?;
        Ok(RoutedReply {
            query_id,
            answer,
            decision,
            seq,
        })
    }
}

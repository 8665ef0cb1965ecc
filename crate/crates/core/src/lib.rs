//! Core library for judge-grade scoreboards, report cards, pre-hoc grade
//! prediction, and cost-aware routing across LLM backends.
//!
//! The pipeline, end to end: load a query corpus and split it
//! deterministically ([`corpus`]), collect responses from a set of model
//! backends ([`backend`]), grade them with an LLM judge under a rubric
//! ([`judge`]), persist every verdict in an append-only record store and
//! aggregate mode scores ([`scoreboard`]), assemble per-model report cards
//! ([`reportcard`]), ask models to predict their own future grade either
//! zero-shot or conditioned on their card ([`predictor`]), measure how well
//! they do ([`metrics`]), export hindsight-relabeled fine-tuning data
//! ([`hindsight`]), and route live queries to the cheapest model that
//! predicts an acceptable grade ([`router`]).
//!
//! Interchangeable pieces (judging strategies, prediction strategies,
//! backends) live behind trait objects and are selected by name through
//! [`registry::Registry`].

pub mod backend;
pub mod config;
pub mod corpus;
pub mod grade;
pub mod hindsight;
pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod prompt;
pub mod registry;
pub mod reportcard;
pub mod rng;
pub mod router;
pub mod scoreboard;
pub mod types;

pub use grade::{parse_grade, Grade, GradeParseError};
pub use types::{Evaluation, JudgingMode, ModelRef, Prediction, PredictionMode, Query};

//! The append-only record store and the aggregates computed over it.
//!
//! Every judge verdict, prediction, and routing decision is appended as one
//! JSON line with a monotonically increasing `seq`. Nothing is ever
//! rewritten: aggregates (grade distributions, mode scores, category
//! heatmaps) are pure folds over the record stream, so re-running them over
//! a replayed store always reproduces the same numbers.
//!
//! Store records carry only the query id. Anything that needs a query's
//! dataset or category joins through a [`QueryIndex`] built from the
//! corpus, and split scoping works the same way: the caller passes the id
//! set of the split half it cares about, recomputed deterministically from
//! the corpus and seed.

use crate::corpus::QueryIndex;
use crate::grade::Grade;
use crate::types::{Evaluation, JudgingMode, Prediction, PredictionMode};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record store I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at {path}:{line}: {detail}")]
    CorruptLine {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("sequence gap at {path}:{line}: expected seq {expected}, found {found}")]
    SeqMismatch {
        path: String,
        line: usize,
        expected: u64,
        found: u64,
    },
    #[error("invalid record rejected: {0}")]
    InvalidRecord(String),
}

/// A routing decision in the shape it is persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub query_id: String,
    /// The model the query was sent to.
    pub chosen: String,
    /// The prediction that selected it; `None` only when every rung of the
    /// ladder failed to produce a prediction.
    pub predicted: Option<Grade>,
    /// One entry per model consulted, in ladder order.
    pub trail: Vec<RoutingTrailEntry>,
    /// True when no model met the threshold and the query fell back to the
    /// last rung.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTrailEntry {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Grade>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A record as it sits in the store, `seq` included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreRecord {
    Evaluation {
        query_id: String,
        model: String,
        grade: Grade,
        rationale: String,
        judging_mode: JudgingMode,
        rubric_id: String,
        judge_model: String,
        seq: u64,
    },
    Prediction {
        query_id: String,
        model: String,
        predicted: Grade,
        prediction_mode: PredictionMode,
        seq: u64,
    },
    Routing {
        query_id: String,
        chosen: String,
        predicted: Option<Grade>,
        trail: Vec<RoutingTrailEntry>,
        fallback: bool,
        seq: u64,
    },
}

impl StoreRecord {
    pub fn seq(&self) -> u64 {
        match self {
            StoreRecord::Evaluation { seq, .. }
            | StoreRecord::Prediction { seq, .. }
            | StoreRecord::Routing { seq, .. } => *seq,
        }
    }

    pub fn query_id(&self) -> &str {
        match self {
            StoreRecord::Evaluation { query_id, .. }
            | StoreRecord::Prediction { query_id, .. }
            | StoreRecord::Routing { query_id, .. } => query_id,
        }
    }
}

/// A record to append, before a sequence number is assigned.
#[derive(Debug, Clone)]
pub enum Record {
    Evaluation(Evaluation),
    Prediction(Prediction),
    Routing(RoutingRecord),
}

impl From<Evaluation> for Record {
    fn from(e: Evaluation) -> Self {
        Record::Evaluation(e)
    }
}

impl From<Prediction> for Record {
    fn from(p: Prediction) -> Self {
        Record::Prediction(p)
    }
}

impl From<RoutingRecord> for Record {
    fn from(r: RoutingRecord) -> Self {
        Record::Routing(r)
    }
}

impl Record {
    fn validate(&self) -> Result<(), StoreError> {
        let complain = |what: &str| Err(StoreError::InvalidRecord(what.to_string()));
        match self {
            Record::Evaluation(e) => {
                if e.query_id.trim().is_empty() || e.model.trim().is_empty() {
                    return complain("evaluation with empty query_id or model");
                }
                if e.rationale.trim().is_empty() {
                    return complain("evaluation without a rationale");
                }
            }
            Record::Prediction(p) => {
                if p.query_id.trim().is_empty() || p.model.trim().is_empty() {
                    return complain("prediction with empty query_id or model");
                }
            }
            Record::Routing(r) => {
                if r.query_id.trim().is_empty() || r.chosen.trim().is_empty() {
                    return complain("routing record with empty query_id or chosen model");
                }
                if r.trail.is_empty() {
                    return complain("routing record with an empty trail");
                }
            }
        }
        Ok(())
    }

    fn into_stored(self, seq: u64) -> StoreRecord {
        match self {
            Record::Evaluation(e) => StoreRecord::Evaluation {
                query_id: e.query_id,
                model: e.model,
                grade: e.grade,
                rationale: e.rationale,
                judging_mode: e.judging_mode,
                rubric_id: e.rubric_id,
                judge_model: e.judge_model,
                seq,
            },
            Record::Prediction(p) => StoreRecord::Prediction {
                query_id: p.query_id,
                model: p.model,
                predicted: p.predicted,
                prediction_mode: p.prediction_mode,
                seq,
            },
            Record::Routing(r) => StoreRecord::Routing {
                query_id: r.query_id,
                chosen: r.chosen,
                predicted: r.predicted,
                trail: r.trail,
                fallback: r.fallback,
                seq,
            },
        }
    }
}

struct StoreInner {
    records: Vec<StoreRecord>,
    file: Option<File>,
    path: Option<PathBuf>,
}

/// An append-only JSONL store of evaluations, predictions, and routing
/// decisions. Appends are serialized through a mutex; `seq` starts at 1
/// and increases by exactly 1 per record, a property that is re-validated
/// when an existing store file is replayed.
pub struct RecordStore {
    inner: Mutex<StoreInner>,
}

impl RecordStore {
    /// Opens a store file, creating it if needed and replaying any
    /// existing records. Replay fails loudly on a corrupt line or a broken
    /// sequence instead of silently skipping history.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let display = path.display().to_string();
        let io_err = |source| StoreError::Io {
            path: display.clone(),
            source,
        };
        let mut records = Vec::new();
        if path.exists() {
            let raw = std::fs::read_to_string(&path).map_err(io_err)?;
            for (idx, line) in raw.lines().enumerate() {
                let line_no = idx + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let record: StoreRecord =
                    serde_json::from_str(line).map_err(|e| StoreError::CorruptLine {
                        path: display.clone(),
                        line: line_no,
                        detail: e.to_string(),
                    })?;
                let expected = records.len() as u64 + 1;
                if record.seq() != expected {
                    return Err(StoreError::SeqMismatch {
                        path: display.clone(),
                        line: line_no,
                        expected,
                        found: record.seq(),
                    });
                }
                records.push(record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(RecordStore {
            inner: Mutex::new(StoreInner {
                records,
                file: Some(file),
                path: Some(path),
            }),
        })
    }

    /// A store with no backing file, for tests and ephemeral runs.
    pub fn in_memory() -> Self {
        RecordStore {
            inner: Mutex::new(StoreInner {
                records: Vec::new(),
                file: None,
                path: None,
            }),
        }
    }

    /// Validates and appends a record, returning its assigned `seq`.
    pub fn append(&self, record: impl Into<Record>) -> Result<u64, StoreError> {
        let record = record.into();
        record.validate()?;
        let mut inner = self.inner.lock().expect("store mutex poisoned");
        let seq = inner.records.len() as u64 + 1;
        let stored = record.into_stored(seq);
        let path = inner
            .path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&stored)
                .map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| StoreError::Io { path, source })?;
        }
        inner.records.push(stored);
        Ok(seq)
    }

    /// A snapshot of all records in append order.
    pub fn records(&self) -> Vec<StoreRecord> {
        self.inner.lock().expect("store mutex poisoned").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store mutex poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Counts of each grade in some slice of the record stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeCounts {
    pub bad: u64,
    pub ok: u64,
    pub great: u64,
}

impl GradeCounts {
    pub fn add(&mut self, grade: Grade) {
        match grade {
            Grade::Bad => self.bad += 1,
            Grade::Ok => self.ok += 1,
            Grade::Great => self.great += 1,
        }
    }

    pub fn get(&self, grade: Grade) -> u64 {
        match grade {
            Grade::Bad => self.bad,
            Grade::Ok => self.ok,
            Grade::Great => self.great,
        }
    }

    pub fn total(&self) -> u64 {
        self.bad + self.ok + self.great
    }

    /// The most frequent grade, resolving ties pessimistically: among
    /// grades tied for the maximum count, the lowest wins. `None` when
    /// there are no grades at all.
    pub fn mode(&self) -> Option<Grade> {
        if self.total() == 0 {
            return None;
        }
        let mut best = Grade::Bad;
        for grade in [Grade::Ok, Grade::Great] {
            if self.get(grade) > self.get(best) {
                best = grade;
            }
        }
        Some(best)
    }

    /// Share of grades at or above `ok`. `None` when empty.
    pub fn at_least_ok_rate(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        Some((self.ok + self.great) as f64 / total as f64)
    }
}

impl FromIterator<Grade> for GradeCounts {
    fn from_iter<I: IntoIterator<Item = Grade>>(iter: I) -> Self {
        let mut counts = GradeCounts::default();
        for grade in iter {
            counts.add(grade);
        }
        counts
    }
}

/// The mode grade for one `(model, dataset)` cell, with its support.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeScore {
    pub model: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub grade: Grade,
    /// Number of evaluations aggregated into this cell.
    pub support: u64,
}

#[derive(Debug, Error)]
pub enum ScoreboardError {
    #[error("no evaluations for model {model:?} on dataset {dataset:?} in the given scope")]
    NoEvaluations { model: String, dataset: String },
}

/// Calls `visit` for every evaluation record that matches the filters, in
/// append order. `restrict`, when given, keeps only the listed query ids —
/// this is how aggregates are scoped to a split.
fn for_each_evaluation(
    store: &RecordStore,
    index: &QueryIndex,
    model: Option<&str>,
    dataset: Option<&str>,
    restrict: Option<&HashSet<String>>,
    mut visit: impl FnMut(&str, &str, Grade),
) {
    for record in store.records() {
        let StoreRecord::Evaluation {
            query_id,
            model: rec_model,
            grade,
            ..
        } = &record
        else {
            continue;
        };
        if let Some(want) = model {
            if rec_model != want {
                continue;
            }
        }
        if let Some(ids) = restrict {
            if !ids.contains(query_id.as_str()) {
                continue;
            }
        }
        if let Some(want) = dataset {
            if index.dataset(query_id) != Some(want) {
                continue;
            }
        }
        visit(query_id, rec_model, *grade);
    }
}

/// Grade counts for one model on one dataset within the given scope.
pub fn grade_distribution(
    store: &RecordStore,
    index: &QueryIndex,
    model: &str,
    dataset: &str,
    restrict: Option<&HashSet<String>>,
) -> GradeCounts {
    let mut counts = GradeCounts::default();
    for_each_evaluation(store, index, Some(model), Some(dataset), restrict, |_, _, grade| {
        counts.add(grade)
    });
    counts
}

/// The mode grade for one model on one dataset, optionally narrowed to a
/// category within the dataset. Ties break pessimistically (see
/// [`GradeCounts::mode`]); no matching evaluations at all is an error.
pub fn mode_score(
    store: &RecordStore,
    index: &QueryIndex,
    model: &str,
    dataset: &str,
    category: Option<&str>,
    restrict: Option<&HashSet<String>>,
) -> Result<ModeScore, ScoreboardError> {
    let mut counts = GradeCounts::default();
    for_each_evaluation(store, index, Some(model), Some(dataset), restrict, |qid, _, grade| {
        if let Some(want) = category {
            if index.category(qid) != Some(want) {
                return;
            }
        }
        counts.add(grade);
    });
    match counts.mode() {
        Some(grade) => Ok(ModeScore {
            model: model.to_string(),
            dataset: dataset.to_string(),
            category: category.map(str::to_string),
            grade,
            support: counts.total(),
        }),
        None => Err(ScoreboardError::NoEvaluations {
            model: model.to_string(),
            dataset: dataset.to_string(),
        }),
    }
}

/// P(grade ≥ ok) per `(category, model)` for one dataset. Evaluations of
/// queries without a category are not part of any cell.
pub fn category_heatmap(
    store: &RecordStore,
    index: &QueryIndex,
    dataset: &str,
    restrict: Option<&HashSet<String>>,
) -> BTreeMap<(String, String), f64> {
    let mut cells: BTreeMap<(String, String), GradeCounts> = BTreeMap::new();
    for_each_evaluation(store, index, None, Some(dataset), restrict, |qid, model, grade| {
        if let Some(category) = index.category(qid) {
            cells
                .entry((category.to_string(), model.to_string()))
                .or_default()
                .add(grade);
        }
    });
    cells
        .into_iter()
        .filter_map(|(key, counts)| counts.at_least_ok_rate().map(|rate| (key, rate)))
        .collect()
}

/// The latest evaluation per `(query, model)` in the given scope, keyed by
/// that pair. "Latest" means highest `seq`, so re-judging a response
/// supersedes earlier verdicts wherever a single grade is needed.
pub fn latest_evaluations(
    store: &RecordStore,
    restrict: Option<&HashSet<String>>,
) -> BTreeMap<(String, String), Evaluation> {
    let mut latest = BTreeMap::new();
    for record in store.records() {
        let StoreRecord::Evaluation {
            query_id,
            model,
            grade,
            rationale,
            judging_mode,
            rubric_id,
            judge_model,
            ..
        } = record
        else {
            continue;
        };
        if let Some(ids) = restrict {
            if !ids.contains(query_id.as_str()) {
                continue;
            }
        }
        latest.insert(
            (query_id.clone(), model.clone()),
            Evaluation {
                query_id,
                model,
                grade,
                rationale,
                judging_mode,
                rubric_id,
                judge_model,
            },
        );
    }
    latest
}

/// The latest predicted grade per `(query, model)` for one prediction
/// mode in the given scope.
pub fn latest_predictions(
    store: &RecordStore,
    mode: PredictionMode,
    restrict: Option<&HashSet<String>>,
) -> BTreeMap<(String, String), Grade> {
    let mut latest = BTreeMap::new();
    for record in store.records() {
        let StoreRecord::Prediction {
            query_id,
            model,
            predicted,
            prediction_mode,
            ..
        } = record
        else {
            continue;
        };
        if prediction_mode != mode {
            continue;
        }
        if let Some(ids) = restrict {
            if !ids.contains(query_id.as_str()) {
                continue;
            }
        }
        latest.insert((query_id, model), predicted);
    }
    latest
}

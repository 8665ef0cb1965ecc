//! Query corpora: JSONL loading and the deterministic train/test split.

use crate::rng::{shuffle, Xoshiro256StarStar};
use crate::types::Query;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

/// Default seed for the train/test split. Fixed so that every run of the
/// pipeline agrees on which queries are held out, and merged with any
/// pre-existing split by virtue of being deterministic.
pub const DEFAULT_SPLIT_SEED: u64 = 42;

/// Default share of queries assigned to the training split.
pub const DEFAULT_SPLIT_RATIO: f64 = 0.75;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus record at {path}:{line}: {detail}")]
    Malformed {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("duplicate query id {0:?}")]
    DuplicateId(String),
    #[error("split ratio must be strictly between 0 and 1, got {0}")]
    BadRatio(f64),
}

/// An in-memory corpus of queries, possibly spanning several datasets.
#[derive(Debug, Clone)]
pub struct Corpus {
    queries: Vec<Query>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from queries, rejecting duplicate ids.
    pub fn from_queries(queries: Vec<Query>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(queries.len());
        for (idx, q) in queries.iter().enumerate() {
            if by_id.insert(q.id.clone(), idx).is_some() {
                return Err(CorpusError::DuplicateId(q.id.clone()));
            }
        }
        Ok(Corpus { queries, by_id })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.by_id.get(id).map(|&idx| &self.queries[idx])
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Distinct dataset labels, sorted.
    pub fn datasets(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .queries
            .iter()
            .map(|q| q.dataset.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        labels.sort();
        labels
    }

    /// Distinct category labels within one dataset, sorted. Queries without
    /// a category are skipped, so the result is empty for datasets that do
    /// not use categories.
    pub fn categories(&self, dataset: &str) -> Vec<String> {
        self.queries
            .iter()
            .filter(|q| q.dataset == dataset)
            .filter_map(|q| q.category.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Loads a corpus from a JSONL file: one JSON object per line with fields
/// `id`, `dataset`, `query`, and optional `category` / `reference_answer`.
/// Blank lines are ignored. Malformed or incomplete records and duplicate
/// ids are errors that name the offending line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut queries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let query: Query = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: display.clone(),
            line: line_no,
            detail: e.to_string(),
        })?;
        for (field, value) in [
            ("id", &query.id),
            ("dataset", &query.dataset),
            ("query", &query.text),
        ] {
            if value.trim().is_empty() {
                return Err(CorpusError::Malformed {
                    path: display.clone(),
                    line: line_no,
                    detail: format!("field {field:?} is empty"),
                });
            }
        }
        if !seen.insert(query.id.clone()) {
            return Err(CorpusError::DuplicateId(query.id.clone()));
        }
        queries.push(query);
    }
    Corpus::from_queries(queries)
}

/// A deterministic train/test partition of a corpus, identified by the seed
/// and ratio that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn train_set(&self) -> HashSet<String> {
        self.train.iter().cloned().collect()
    }

    pub fn test_set(&self) -> HashSet<String> {
        self.test.iter().cloned().collect()
    }
}

/// Splits a corpus into train/test deterministically.
///
/// The algorithm is part of the store's compatibility contract and is
/// frozen by golden tests: sort the ids lexicographically (UTF-8 byte
/// order), shuffle them with [`Xoshiro256StarStar`] seeded from `seed`
/// using the Fisher–Yates procedure in [`shuffle`], and take the first
/// `floor(ratio × N)` ids as train, the rest as test. Input order of the
/// corpus never matters because of the initial sort.
pub fn split_corpus(corpus: &Corpus, seed: u64, ratio: f64) -> Result<Split, CorpusError> {
    let ids: Vec<String> = corpus.queries.iter().map(|q| q.id.clone()).collect();
    split_ids(ids, seed, ratio)
}

/// The split algorithm on bare ids; see [`split_corpus`].
pub fn split_ids(mut ids: Vec<String>, seed: u64, ratio: f64) -> Result<Split, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    ids.sort();
    let mut rng = Xoshiro256StarStar::from_seed(seed);
    shuffle(&mut rng, &mut ids);
    let train_len = (ratio * ids.len() as f64).floor() as usize;
    let test = ids.split_off(train_len);
    Ok(Split {
        seed,
        ratio,
        train: ids,
        test,
    })
}

/// Maps query ids to their dataset and category, for aggregations over
/// store records (which carry only the query id).
#[derive(Debug, Clone, Default)]
pub struct QueryIndex {
    map: HashMap<String, (String, Option<String>)>,
}

impl QueryIndex {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let map = corpus
            .queries
            .iter()
            .map(|q| (q.id.clone(), (q.dataset.clone(), q.category.clone())))
            .collect();
        QueryIndex { map }
    }

    pub fn dataset(&self, query_id: &str) -> Option<&str> {
        self.map.get(query_id).map(|(d, _)| d.as_str())
    }

    pub fn category(&self, query_id: &str) -> Option<&str> {
        self.map
            .get(query_id)
            .and_then(|(_, c)| c.as_deref())
    }
}

//! Prediction-quality metrics and deterministic CSV emission.
//!
//! Accuracy compares a model's latest predicted grade with the judge's
//! latest actual grade per `(query, model)` pair. Improvement deltas are
//! plain differences of accuracies; summary means round half away from
//! zero to two decimals. Every table builder iterates sorted keys and uses
//! fixed number formats, so emitting the same store twice produces
//! byte-identical CSV.

use crate::corpus::QueryIndex;
use crate::grade::Grade;
use crate::scoreboard::{
    category_heatmap, grade_distribution, latest_evaluations, latest_predictions, RecordStore,
    StoreRecord,
};
use crate::types::PredictionMode;
use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot compute {0} over empty input")]
    EmptyInput(&'static str),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Share of `(predicted, actual)` pairs that agree. Empty input is an
/// error rather than a silent 0 or NaN.
pub fn prediction_accuracy(pairs: &[(Grade, Grade)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput("prediction accuracy"));
    }
    let hits = pairs.iter().filter(|(p, a)| p == a).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Accuracy improvement going from `before` to `after`.
pub fn improvement_delta(after: f64, before: f64) -> f64 {
    after - before
}

/// Rounds to two decimals, halves away from zero (so 0.545 → 0.55 and
/// -0.015 → -0.02, within the limits of binary floats).
pub fn round2_half_away_from_zero(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Mean of a row of deltas, rounded half away from zero to two decimals.
pub fn summary_row(deltas: &[f64]) -> Result<f64, MetricsError> {
    if deltas.is_empty() {
        return Err(MetricsError::EmptyInput("summary row"));
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    Ok(round2_half_away_from_zero(mean))
}

/// Formats a delta as a signed two-decimal string ("+0.55", "-0.10",
/// "+0.00"). Zero is always positive.
pub fn format_delta(delta: f64) -> String {
    let rounded = round2_half_away_from_zero(delta);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:+.2}")
}

/// Formats a probability or accuracy with four decimals.
pub fn format_rate(rate: f64) -> String {
    format!("{rate:.4}")
}

/// A rectangular table destined for CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Serializes with RFC-4180-style quoting (fields containing commas,
    /// quotes, or newlines are quoted, quotes doubled). Deterministic:
    /// the same table always yields the same bytes.
    pub fn to_csv_string(&self) -> Result<String, MetricsError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| MetricsError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes the table to a file in one shot.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let contents = self.to_csv_string()?;
        std::fs::write(path, contents).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn models_with_evaluations(store: &RecordStore) -> BTreeSet<String> {
    store
        .records()
        .into_iter()
        .filter_map(|r| match r {
            StoreRecord::Evaluation { model, .. } => Some(model),
            _ => None,
        })
        .collect()
}

fn models_with_predictions(store: &RecordStore, mode: Option<PredictionMode>) -> BTreeSet<String> {
    store
        .records()
        .into_iter()
        .filter_map(|r| match r {
            StoreRecord::Prediction {
                model,
                prediction_mode,
                ..
            } if mode.is_none() || mode == Some(prediction_mode) => Some(model),
            _ => None,
        })
        .collect()
}

/// Joins the latest prediction (of `mode`) with the latest evaluation per
/// query for one model on one dataset, in sorted query order.
pub fn accuracy_pairs(
    store: &RecordStore,
    index: &QueryIndex,
    model: &str,
    dataset: &str,
    mode: PredictionMode,
    restrict: Option<&HashSet<String>>,
) -> Vec<(Grade, Grade)> {
    let predictions = latest_predictions(store, mode, restrict);
    let evaluations = latest_evaluations(store, restrict);
    predictions
        .into_iter()
        .filter(|((query_id, pred_model), _)| {
            pred_model == model && index.dataset(query_id) == Some(dataset)
        })
        .filter_map(|(key, predicted)| {
            evaluations.get(&key).map(|eval| (predicted, eval.grade))
        })
        .collect()
}

/// Grade counts per `(model, dataset)` cell with at least one evaluation.
pub fn distribution_table(
    store: &RecordStore,
    index: &QueryIndex,
    datasets: &[String],
    restrict: Option<&HashSet<String>>,
) -> CsvTable {
    let mut sorted_datasets: Vec<&String> = datasets.iter().collect();
    sorted_datasets.sort();
    sorted_datasets.dedup();
    let mut rows = Vec::new();
    for model in models_with_evaluations(store) {
        for dataset in &sorted_datasets {
            let counts = grade_distribution(store, index, &model, dataset, restrict);
            if counts.total() == 0 {
                continue;
            }
            rows.push(vec![
                model.clone(),
                (*dataset).clone(),
                counts.bad.to_string(),
                counts.ok.to_string(),
                counts.great.to_string(),
                counts.total().to_string(),
            ]);
        }
    }
    CsvTable {
        header: ["model", "dataset", "bad", "ok", "great", "total"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

/// P(grade ≥ ok) per `(category, model)` for one dataset.
pub fn heatmap_table(
    store: &RecordStore,
    index: &QueryIndex,
    dataset: &str,
    restrict: Option<&HashSet<String>>,
) -> CsvTable {
    let rows = category_heatmap(store, index, dataset, restrict)
        .into_iter()
        .map(|((category, model), rate)| vec![category, model, format_rate(rate)])
        .collect();
    CsvTable {
        header: ["category", "model", "p_at_least_ok"].map(String::from).to_vec(),
        rows,
    }
}

/// Prediction accuracy per `(model, dataset)` cell for one mode.
pub fn accuracy_table(
    store: &RecordStore,
    index: &QueryIndex,
    datasets: &[String],
    mode: PredictionMode,
    restrict: Option<&HashSet<String>>,
) -> CsvTable {
    let mut sorted_datasets: Vec<&String> = datasets.iter().collect();
    sorted_datasets.sort();
    sorted_datasets.dedup();
    let mut rows = Vec::new();
    for model in models_with_predictions(store, Some(mode)) {
        for dataset in &sorted_datasets {
            let pairs = accuracy_pairs(store, index, &model, dataset, mode, restrict);
            let Ok(accuracy) = prediction_accuracy(&pairs) else {
                continue;
            };
            rows.push(vec![
                model.clone(),
                (*dataset).clone(),
                pairs.len().to_string(),
                format_rate(accuracy),
            ]);
        }
    }
    CsvTable {
        header: ["model", "dataset", "n", "accuracy"].map(String::from).to_vec(),
        rows,
    }
}

/// The contextual-vs-zero-shot summary: one row per model, one column per
/// dataset holding the accuracy delta (contextual minus zero-shot), and a
/// trailing mean column averaging the printed two-decimal deltas.
pub fn contextual_summary_table(
    store: &RecordStore,
    index: &QueryIndex,
    datasets: &[String],
    restrict: Option<&HashSet<String>>,
) -> CsvTable {
    let mut sorted_datasets: Vec<&String> = datasets.iter().collect();
    sorted_datasets.sort();
    sorted_datasets.dedup();
    let mut header = vec!["model".to_string()];
    header.extend(sorted_datasets.iter().map(|d| (*d).clone()));
    header.push("mean".to_string());

    let models: BTreeSet<String> = models_with_predictions(store, None);
    let mut rows = Vec::new();
    for model in models {
        let mut cells = vec![model.clone()];
        let mut printed_deltas = Vec::new();
        for dataset in &sorted_datasets {
            let zero_shot = accuracy_pairs(
                store, index, &model, dataset, PredictionMode::ZeroShot, restrict,
            );
            let contextual = accuracy_pairs(
                store, index, &model, dataset, PredictionMode::Contextual, restrict,
            );
            match (
                prediction_accuracy(&zero_shot),
                prediction_accuracy(&contextual),
            ) {
                (Ok(before), Ok(after)) => {
                    let delta = improvement_delta(after, before);
                    cells.push(format_delta(delta));
                    printed_deltas.push(round2_half_away_from_zero(delta));
                }
                _ => cells.push(String::new()),
            }
        }
        let Ok(mean) = summary_row(&printed_deltas) else {
            continue; // no dataset had both prediction modes
        };
        cells.push(format_delta(mean));
        rows.push(cells);
    }
    CsvTable { header, rows }
}

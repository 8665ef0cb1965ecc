//! Acceptance gate: ten end-to-end checks covering summary arithmetic,
//! aggregation semantics, golden report cards, retry budgets, CLI
//! determinism, prediction calibration, routing invariants, SFT export
//! conservation, split stability, and gateway conformance.
//!
//! Each check prints `ACCEPTANCE <n> <name>: PASS` on success (visible
//! with `cargo test --test acceptance -- --nocapture`); a failure fails
//! the test itself with the offending assertion.

use prescore_core::backend::scripted::{ContainsRule, ScriptedBackend, ScriptedBehavior};
use prescore_core::backend::ChatBackend;
use prescore_core::config::PipelineConfig;
use prescore_core::corpus::{split_ids, Corpus, QueryIndex, Split};
use prescore_core::grade::Grade;
use prescore_core::hindsight::build_sft_dataset;
use prescore_core::judge::judging_registry;
use prescore_core::metrics::{accuracy_pairs, format_delta, summary_row};
use prescore_core::pipeline::Pipeline;
use prescore_core::predictor::{prediction_registry, PredictContext};
use prescore_core::prompt::TemplateSet;
use prescore_core::registry::Registry;
use prescore_core::reportcard::{
    build_report_card, render_report_card, CardVariant, DatasetCatalog,
};
use prescore_core::router::{decide, Ladder, RoutePredictor};
use prescore_core::scoreboard::{
    grade_distribution, mode_score, Record, RecordStore, StoreRecord,
};
use prescore_core::types::{
    Evaluation, JudgingMode, ModelRef, Prediction, PredictionMode, Query,
};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

fn pass(number: u8, name: &str) {
    println!("ACCEPTANCE {number} {name}: PASS");
}

/// A small deterministic generator for the randomized criteria, kept
/// separate from the library's own PRNG so the checks stay independent.
struct Lcg(u64);

impl Lcg {
    fn new(seed: u64) -> Self {
        Lcg(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1))
    }

    fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        self.0 >> 11
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    fn grade(&mut self) -> Grade {
        match self.below(3) {
            0 => Grade::Bad,
            1 => Grade::Ok,
            _ => Grade::Great,
        }
    }
}

fn evaluation(query_id: &str, model: &str, grade: Grade) -> Evaluation {
    Evaluation {
        query_id: query_id.to_string(),
        model: model.to_string(),
        grade,
        rationale: "scripted rationale".into(),
        judging_mode: JudgingMode::Combined,
        rubric_id: "rubric".into(),
        judge_model: "grader".into(),
    }
}

// --- 1. summary arithmetic ---------------------------------------------

/// Reference per-dataset contextual-over-zero-shot accuracy deltas, one
/// row per model, with the mean each row is published with.
const CONTEXTUAL_DELTAS: &[(&str, [f64; 5], f64)] = &[
    ("M09B", [-0.10, 0.27, -0.15, -0.11, -0.43], -0.10),
    ("L321B", [0.28, 0.12, 0.91, 0.55, 0.90], 0.55),
    ("L323B", [-0.01, -0.12, 0.35, 0.24, -0.12], 0.07),
    ("L318B", [0.22, -0.05, -0.22, -0.00, 0.03], -0.00),
    ("DSQ14B", [0.14, 0.07, -0.17, 0.07, -0.02], 0.02),
    ("GPT20B", [0.00, -0.13, 0.16, -0.01, -0.08], -0.01),
    ("DSQ32B", [0.03, 0.09, 0.75, 0.02, -0.13], 0.15),
    ("L3370B", [0.59, 0.67, -0.03, 0.24, 0.38], 0.37),
    ("DSL70B", [0.14, 0.21, 0.53, 0.10, -0.22], 0.15),
    ("L416E", [0.06, 0.08, 0.01, 0.13, 0.28], 0.11),
    ("GPT120B", [0.04, 0.18, 0.05, -0.05, 0.18], 0.08),
];

/// Reference fine-tuned-over-zero-shot deltas, one column per model.
/// The M09B column is the known divergence: its printed mean is -0.02,
/// but the mean of the printed deltas is -0.014, which rounds away from
/// zero to -0.01 — so that column pins our arithmetic, not the print.
const FINETUNED_DELTAS: &[(&str, [f64; 5], f64)] = &[
    ("M09B", [-0.09, 0.19, 0.23, -0.07, -0.33], -0.01),
    ("L321B", [0.46, 0.19, 0.66, 0.64, 0.65], 0.52),
    ("L323B", [0.10, 0.41, 0.35, 0.37, -0.02], 0.24),
    ("L318B", [0.09, 0.04, 0.03, 0.13, 0.08], 0.07),
];

#[test]
fn criterion_01_summary_arithmetic() {
    let started = Instant::now();
    for (model, deltas, mean) in CONTEXTUAL_DELTAS {
        let row = summary_row(deltas).unwrap();
        assert_eq!(row, *mean, "contextual summary row for {model}");
    }
    for (model, deltas, mean) in FINETUNED_DELTAS {
        let row = summary_row(deltas).unwrap();
        assert_eq!(row, *mean, "fine-tuned summary row for {model}");
    }
    // The two headline rows, checked against their formatted form too.
    let contextual_l321b = CONTEXTUAL_DELTAS.iter().find(|r| r.0 == "L321B").unwrap();
    assert_eq!(format_delta(summary_row(&contextual_l321b.1).unwrap()), "+0.55");
    let finetuned_l321b = FINETUNED_DELTAS.iter().find(|r| r.0 == "L321B").unwrap();
    assert_eq!(format_delta(summary_row(&finetuned_l321b.1).unwrap()), "+0.52");
    // The divergent column really is divergent: the recomputed mean is
    // -0.014, which our half-away-from-zero rule rounds to -0.01.
    let m09b = FINETUNED_DELTAS.iter().find(|r| r.0 == "M09B").unwrap();
    let raw_mean = m09b.1.iter().sum::<f64>() / 5.0;
    assert!((raw_mean - (-0.014)).abs() < 1e-12);
    assert_eq!(summary_row(&m09b.1).unwrap(), -0.01);
    assert_ne!(summary_row(&m09b.1).unwrap(), -0.02);
    assert!(started.elapsed() < Duration::from_secs(1), "criterion must finish inside 1s");
    pass(1, "summary arithmetic reproduction");
}

// --- 2. mode-score oracle equivalence ----------------------------------

/// Brute-force mode with the pessimistic tie-break: highest count wins,
/// and among tied counts the lowest grade does.
fn oracle_mode(grades: &[Grade]) -> Grade {
    let mut best = Grade::Bad;
    let mut best_count = 0usize;
    for candidate in [Grade::Bad, Grade::Ok, Grade::Great] {
        let count = grades.iter().filter(|&&g| g == candidate).count();
        if count > best_count {
            best = candidate;
            best_count = count;
        }
    }
    best
}

#[test]
fn criterion_02_mode_score_oracle() {
    let started = Instant::now();
    let mut rng = Lcg::new(2);
    for round in 0..1000 {
        let size = rng.below(50) as usize + 1;
        let grades: Vec<Grade> = (0..size).map(|_| rng.grade()).collect();
        let queries: Vec<Query> = (0..size)
            .map(|i| Query::new(format!("q{i:02}"), "bench", format!("probe {i}")))
            .collect();
        let corpus = Corpus::from_queries(queries).unwrap();
        let index = QueryIndex::from_corpus(&corpus);
        let store = RecordStore::in_memory();
        for (i, grade) in grades.iter().enumerate() {
            store
                .append(Record::Evaluation(evaluation(&format!("q{i:02}"), "m", *grade)))
                .unwrap();
        }
        let score = mode_score(&store, &index, "m", "bench", None, None).unwrap();
        assert_eq!(
            score.grade,
            oracle_mode(&grades),
            "round {round}: multiset {grades:?}"
        );
        assert_eq!(score.support, grades.len() as u64);
    }
    assert!(started.elapsed() < Duration::from_secs(5), "criterion must finish inside 5s");
    pass(2, "mode-score oracle equivalence (1000 multisets)");
}

// --- 3. golden report cards --------------------------------------------

/// The reference mode-score matrix: eleven models by five query families
/// (aime, longfact, medqa, scicode, mmlu_pro).
const MODE_MATRIX: &[(&str, [Grade; 5])] = &[
    ("m09b", [Grade::Bad, Grade::Bad, Grade::Bad, Grade::Bad, Grade::Bad]),
    ("l321b", [Grade::Bad, Grade::Ok, Grade::Bad, Grade::Bad, Grade::Bad]),
    ("l323b", [Grade::Bad, Grade::Great, Grade::Great, Grade::Bad, Grade::Bad]),
    ("l318b", [Grade::Bad, Grade::Ok, Grade::Great, Grade::Bad, Grade::Great]),
    ("gpt20b", [Grade::Bad, Grade::Great, Grade::Great, Grade::Great, Grade::Great]),
    ("dsq14b", [Grade::Great, Grade::Great, Grade::Ok, Grade::Great, Grade::Great]),
    ("dsq32b", [Grade::Bad, Grade::Great, Grade::Great, Grade::Ok, Grade::Great]),
    ("gpt120b", [Grade::Bad, Grade::Great, Grade::Great, Grade::Great, Grade::Great]),
    ("dsl70b", [Grade::Bad, Grade::Great, Grade::Great, Grade::Ok, Grade::Great]),
    ("l3370b", [Grade::Great, Grade::Great, Grade::Great, Grade::Ok, Grade::Great]),
    ("l416e", [Grade::Great, Grade::Great, Grade::Great, Grade::Great, Grade::Great]),
];

const MATRIX_DATASETS: [&str; 5] = ["aime", "longfact", "medqa", "scicode", "mmlu_pro"];

#[test]
fn criterion_03_golden_report_cards() {
    // Five queries per family; each (model, family) cell gets three
    // evaluations of the target grade and one of each other grade, so the
    // cell's mode is the target with no ties.
    let queries: Vec<Query> = MATRIX_DATASETS
        .iter()
        .flat_map(|ds| {
            (0..5).map(move |i| Query::new(format!("{ds}-q{i}"), *ds, format!("{ds} probe {i}")))
        })
        .collect();
    let corpus = Corpus::from_queries(queries).unwrap();
    let index = QueryIndex::from_corpus(&corpus);
    let store = RecordStore::in_memory();
    for (model, row) in MODE_MATRIX {
        for (ds, target) in MATRIX_DATASETS.iter().zip(row.iter()) {
            let others: Vec<Grade> = [Grade::Bad, Grade::Ok, Grade::Great]
                .into_iter()
                .filter(|g| g != target)
                .collect();
            let grades = [*target, *target, *target, others[0], others[1]];
            for (i, grade) in grades.iter().enumerate() {
                store
                    .append(Record::Evaluation(evaluation(&format!("{ds}-q{i}"), model, *grade)))
                    .unwrap();
            }
        }
    }
    let datasets: Vec<String> = MATRIX_DATASETS.iter().map(|s| s.to_string()).collect();
    let catalog = DatasetCatalog::default();
    let templates = TemplateSet::builtin().unwrap();
    let mut cells_checked = 0;
    for (model, row) in MODE_MATRIX {
        let card = build_report_card(
            &store,
            &index,
            model,
            &datasets,
            &catalog,
            None,
            chrono_epoch(),
        )
        .unwrap();
        let by_dataset: BTreeMap<&str, Grade> = card
            .entries
            .iter()
            .map(|e| (e.dataset.as_str(), e.grade))
            .collect();
        for (ds, expected) in MATRIX_DATASETS.iter().zip(row.iter()) {
            assert_eq!(
                by_dataset[ds], *expected,
                "card cell ({model}, {ds})"
            );
            cells_checked += 1;
        }
        // The rendered card carries exactly one grade token per entry.
        let rendered = render_report_card(&card, CardVariant::Long, &templates).unwrap();
        let tokens: usize = [Grade::Bad, Grade::Ok, Grade::Great]
            .iter()
            .map(|g| prescore_core::grade::count_grade_tokens(&rendered, *g))
            .sum();
        assert_eq!(tokens, card.entries.len());
    }
    assert_eq!(cells_checked, 55);
    pass(3, "golden report cards (55 cells)");
}

fn chrono_epoch() -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::from_timestamp(0, 0).unwrap()
}

// --- 4. retry budgets ---------------------------------------------------

const GARBAGE: &str = "The weather is lovely and nothing here resembles a verdict.";

fn scripted(behavior: ScriptedBehavior) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new("scripted", behavior))
}

#[tokio::test]
async fn criterion_04_retry_budgets() {
    let started = Instant::now();
    let templates = TemplateSet::builtin().unwrap();
    let judging = judging_registry();
    let combined = judging.expect("combined").unwrap();
    let query = Query::new("q1", "bench", "What color is the sky?");
    let responses: BTreeMap<String, String> =
        [("worker".to_string(), "It is blue. QUALITY:great".to_string())].into();

    // Judge, clean path: one call.
    let judge = scripted(ScriptedBehavior::MarkerJudge { default: Grade::Bad });
    let ctx = prescore_core::judge::JudgeContext {
        judge: judge.as_ref(),
        templates: &templates,
        rubric_id: "rubric",
        label_seed: 7,
    };
    combined.evaluate_query(&ctx, &query, &responses).await.unwrap();
    assert_eq!(judge.call_count(), 1, "clean judging takes one call");

    // Judge, correction path: garbage first, valid verdict on the
    // correction request, exactly two calls.
    let judge = scripted(ScriptedBehavior::ContainsRules {
        rules: vec![ContainsRule {
            needle: "could not be parsed".into(),
            response: r#"{"R1": {"grade": "ok", "rationale": "Adequate."}}"#.into(),
        }],
        default: Some(GARBAGE.into()),
    });
    let ctx = prescore_core::judge::JudgeContext {
        judge: judge.as_ref(),
        templates: &templates,
        rubric_id: "rubric",
        label_seed: 7,
    };
    let evaluations = combined.evaluate_query(&ctx, &query, &responses).await.unwrap();
    assert_eq!(judge.call_count(), 2, "one correction, no more");
    assert_eq!(evaluations[0].grade, Grade::Ok);

    // Judge, double failure: exactly two calls, then the unparseable error.
    let judge = scripted(ScriptedBehavior::ContainsRules {
        rules: vec![],
        default: Some(GARBAGE.into()),
    });
    let ctx = prescore_core::judge::JudgeContext {
        judge: judge.as_ref(),
        templates: &templates,
        rubric_id: "rubric",
        label_seed: 7,
    };
    let err = combined.evaluate_query(&ctx, &query, &responses).await.unwrap_err();
    assert_eq!(judge.call_count(), 2, "budget is two calls even on failure");
    assert!(matches!(
        err,
        prescore_core::judge::JudgeError::UnparseableVerdict { .. }
    ));

    // Predictor, clean path: one call.
    let prediction = prediction_registry();
    let zero_shot = prediction.expect("zero_shot").unwrap();
    let model = ModelRef::new("scripted", 1, false);
    let empty_cards = BTreeMap::new();
    let backend = scripted(ScriptedBehavior::Fixed { text: "great".into() });
    let mut backends: Registry<dyn ChatBackend> = Registry::new("backend");
    backends.register("scripted", backend.clone() as Arc<dyn ChatBackend>).unwrap();
    let ctx = PredictContext {
        templates: &templates,
        backends: &backends,
        cards: &empty_cards,
    };
    let predicted = zero_shot.predict(&ctx, &model, &query).await.unwrap();
    assert_eq!(backend.call_count(), 1, "clean prediction takes one call");
    assert_eq!(predicted.predicted, Grade::Great);

    // Predictor, correction path: exactly two calls.
    let backend = scripted(ScriptedBehavior::ContainsRules {
        rules: vec![ContainsRule {
            needle: "could not be parsed".into(),
            response: "ok".into(),
        }],
        default: Some(GARBAGE.into()),
    });
    let mut backends: Registry<dyn ChatBackend> = Registry::new("backend");
    backends.register("scripted", backend.clone() as Arc<dyn ChatBackend>).unwrap();
    let ctx = PredictContext {
        templates: &templates,
        backends: &backends,
        cards: &empty_cards,
    };
    let predicted = zero_shot.predict(&ctx, &model, &query).await.unwrap();
    assert_eq!(backend.call_count(), 2, "one correction, no more");
    assert_eq!(predicted.predicted, Grade::Ok);

    // Predictor, double failure: exactly two calls, then the error.
    let backend = scripted(ScriptedBehavior::ContainsRules {
        rules: vec![],
        default: Some(GARBAGE.into()),
    });
    let mut backends: Registry<dyn ChatBackend> = Registry::new("backend");
    backends.register("scripted", backend.clone() as Arc<dyn ChatBackend>).unwrap();
    let ctx = PredictContext {
        templates: &templates,
        backends: &backends,
        cards: &empty_cards,
    };
    let err = zero_shot.predict(&ctx, &model, &query).await.unwrap_err();
    assert_eq!(backend.call_count(), 2, "budget is two calls even on failure");
    assert!(matches!(
        err,
        prescore_core::predictor::PredictorError::Unparseable { .. }
    ));

    assert!(started.elapsed() < Duration::from_secs(5), "criterion must finish inside 5s");
    pass(4, "retry budgets (max two calls everywhere)");
}

// --- 5. end-to-end CLI determinism -------------------------------------

const E2E_CONFIG: &str = r#"
store = "records.jsonl"
corpus = "corpus.jsonl"

[judge]
model = "grader"

[[models]]
id = "grader"
cost_rank = 99
routed = false
[models.scripted]
kind = "marker_judge"

[[models]]
id = "small"
cost_rank = 1
[models.scripted]
kind = "quality_responder"

[[models]]
id = "medium"
cost_rank = 2
[models.scripted]
kind = "quality_responder"

[[models]]
id = "large"
cost_rank = 3
[models.scripted]
kind = "quality_responder"
"#;

fn write_e2e_corpus(dir: &Path) {
    let mut out = String::new();
    for (d, ds) in ["medqa", "aime", "longfact"].iter().enumerate() {
        for i in 0..20 {
            out.push_str(&format!(
                "{}\n",
                serde_json::json!({
                    "id": format!("{ds}-{i:02}"),
                    "dataset": ds,
                    "query": format!("Synthetic {ds} question number {i} (batch {d})."),
                })
            ));
        }
    }
    std::fs::write(dir.join("corpus.jsonl"), out).unwrap();
}

fn prescore_cmd(dir: &Path, args: &[&str]) -> Vec<u8> {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_prescore"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("prescore binary runs");
    assert!(
        output.status.success(),
        "prescore {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output.stdout
}

/// Runs the full chain in one directory and returns every artifact the
/// run produced, keyed by name.
fn run_e2e_chain(dir: &Path) -> Vec<(&'static str, Vec<u8>)> {
    std::fs::write(dir.join("prescore.toml"), E2E_CONFIG).unwrap();
    write_e2e_corpus(dir);
    let mut artifacts = Vec::new();
    artifacts.push(("split", prescore_cmd(dir, &["split", "--json"])));
    prescore_cmd(dir, &["evaluate", "--mode", "combined"]);
    artifacts.push((
        "report-card",
        prescore_cmd(
            dir,
            &[
                "report-card",
                "--model",
                "small",
                "--variant",
                "long",
                "--split",
                "train",
                "--generated-at",
                "2026-01-01T00:00:00Z",
            ],
        ),
    ));
    prescore_cmd(dir, &["predict", "--mode", "zero_shot", "--split", "test"]);
    prescore_cmd(dir, &["predict", "--mode", "contextual", "--split", "test"]);
    for (name, args) in [
        ("distribution.csv", vec!["metrics", "--table", "distribution", "--out", "distribution.csv"]),
        (
            "accuracy_zs.csv",
            vec!["metrics", "--table", "accuracy", "--mode", "zero_shot", "--split", "test", "--out", "accuracy_zs.csv"],
        ),
        (
            "accuracy_ctx.csv",
            vec!["metrics", "--table", "accuracy", "--mode", "contextual", "--split", "test", "--out", "accuracy_ctx.csv"],
        ),
        (
            "summary.csv",
            vec!["metrics", "--table", "contextual-summary", "--split", "test", "--out", "summary.csv"],
        ),
    ] {
        prescore_cmd(dir, &args);
        artifacts.push((name, std::fs::read(dir.join(name)).unwrap()));
    }
    artifacts.push(("records.jsonl", std::fs::read(dir.join("records.jsonl")).unwrap()));
    artifacts
}

#[test]
fn criterion_05_end_to_end_cli_determinism() {
    let started = Instant::now();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run_a = run_e2e_chain(dir_a.path());
    let run_b = run_e2e_chain(dir_b.path());
    assert_eq!(run_a.len(), run_b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in run_a.iter().zip(run_b.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(
            bytes_a, bytes_b,
            "artifact {name_a} differs between identical runs"
        );
    }
    // The chain really did its work: 60 queries for 3 models, graded and
    // then predicted on the test split twice (two modes).
    let store = {
        let text = String::from_utf8(run_a.last().unwrap().1.clone()).unwrap();
        text.lines().count()
    };
    assert_eq!(store, 180 + 15 * 3 * 2, "180 evaluations + 90 predictions");
    assert!(started.elapsed() < Duration::from_secs(30), "criterion must finish inside 30s");
    pass(5, "end-to-end CLI chain, byte-identical twice");
}

// --- 6. calibration re-enactment ----------------------------------------

#[tokio::test]
async fn criterion_06_calibration_reenactment() {
    // Part one: a model that always predicts "great" about itself while
    // its true verdicts are mostly bad. Its zero-shot accuracy must land
    // exactly on its true great-rate.
    let config = r#"
        store = "unused.jsonl"

        [judge]
        model = "grader"

        [[models]]
        id = "grader"
        cost_rank = 99
        routed = false
        [models.scripted]
        kind = "marker_judge"

        [[models]]
        id = "bragger"
        cost_rank = 1
        [models.scripted]
        kind = "contains_rules"
        default = "A straightforward answer without embellishment."

        [[models.scripted.rules]]
        needle = "will grade the response you would give"
        response = "great"

        [[models.scripted.rules]]
        needle = "marked-query"
        response = "Detailed and careful work. QUALITY:great"
    "#;
    let config = PipelineConfig::from_toml(config, "test").unwrap();
    let pipeline = Pipeline::in_memory(config).unwrap();
    let queries: Vec<Query> = (0..20)
        .map(|i| {
            let text = if i % 4 == 0 {
                format!("This is marked-query number {i}.")
            } else {
                format!("This is a plain question number {i}.")
            };
            Query::new(format!("p{i:02}"), "probe", text)
        })
        .collect();
    let corpus = Corpus::from_queries(queries).unwrap();
    let index = QueryIndex::from_corpus(&corpus);
    pipeline.run_evaluate(&corpus, JudgingMode::Combined).await.unwrap();
    pipeline
        .run_predict(&corpus, PredictionMode::ZeroShot, prescore_core::pipeline::SplitScope::All)
        .await
        .unwrap();
    let store = pipeline.store();
    let counts = grade_distribution(store, &index, "bragger", "probe", None);
    assert_eq!(counts.mode().unwrap(), Grade::Bad, "true modes are bad");
    let great_rate = counts.great as f64 / counts.total() as f64;
    assert_eq!(great_rate, 0.25);
    let pairs = accuracy_pairs(store, &index, "bragger", "probe", PredictionMode::ZeroShot, None);
    assert_eq!(pairs.len(), 20);
    assert!(pairs.iter().all(|(p, _)| *p == Grade::Great));
    let accuracy = pairs.iter().filter(|(p, a)| p == a).count() as f64 / pairs.len() as f64;
    assert_eq!(
        accuracy, great_rate,
        "always-great predictions score exactly the great-rate"
    );

    // Part two: a card-aware model. Its answers are graded with known
    // per-family distributions; reading its own report card lets it
    // predict each family's most frequent verdict, which scores at least
    // the majority-grade rate — while zero-shot (no card) falls back to a
    // constant guess.
    let store = RecordStore::in_memory();
    let mut queries = Vec::new();
    let mut plans: Vec<(&str, Vec<Grade>)> = vec![
        (
            "medqa",
            [vec![Grade::Great; 6], vec![Grade::Ok; 3], vec![Grade::Bad; 1]].concat(),
        ),
        (
            "aime",
            [vec![Grade::Bad; 7], vec![Grade::Ok; 2], vec![Grade::Great; 1]].concat(),
        ),
        (
            "longfact",
            [vec![Grade::Ok; 5], vec![Grade::Bad; 3], vec![Grade::Great; 2]].concat(),
        ),
    ];
    for (ds, grades) in &mut plans {
        for (i, grade) in grades.iter().enumerate() {
            let id = format!("{ds}-{i:02}");
            queries.push(Query::new(
                &id,
                *ds,
                format!("Question {i} for this family. [dataset:{ds}]"),
            ));
            store.append(Record::Evaluation(evaluation(&id, "echo", *grade))).unwrap();
        }
    }
    let corpus = Corpus::from_queries(queries).unwrap();
    let index = QueryIndex::from_corpus(&corpus);
    let templates = TemplateSet::builtin().unwrap();
    let echo = scripted(ScriptedBehavior::CardModeEcho { default: Grade::Bad });
    let mut backends: Registry<dyn ChatBackend> = Registry::new("backend");
    backends.register("echo", echo as Arc<dyn ChatBackend>).unwrap();
    let card = build_report_card(
        &store,
        &index,
        "echo",
        &corpus.datasets(),
        &DatasetCatalog::default(),
        None,
        chrono_epoch(),
    )
    .unwrap();
    let mut cards = BTreeMap::new();
    cards.insert(
        "echo".to_string(),
        render_report_card(&card, CardVariant::Long, &templates).unwrap(),
    );
    let empty_cards = BTreeMap::new();
    let registry = prediction_registry();
    let model = ModelRef::new("echo", 1, false);
    for (strategy_name, cards_in_play) in [("zero_shot", &empty_cards), ("contextual", &cards)] {
        let strategy = registry.expect(strategy_name).unwrap();
        let ctx = PredictContext {
            templates: &templates,
            backends: &backends,
            cards: cards_in_play,
        };
        for query in corpus.queries() {
            let prediction = strategy.predict(&ctx, &model, query).await.unwrap();
            store.append(Record::Prediction(prediction)).unwrap();
        }
    }
    let mut contextual_total = 0.0;
    let mut zero_shot_total = 0.0;
    for (ds, grades) in &plans {
        let n = grades.len() as f64;
        let majority = grades.iter().filter(|&&g| g == oracle_mode(grades)).count() as f64 / n;
        let ctx_pairs = accuracy_pairs(&store, &index, "echo", ds, PredictionMode::Contextual, None);
        let ctx_accuracy =
            ctx_pairs.iter().filter(|(p, a)| p == a).count() as f64 / ctx_pairs.len() as f64;
        assert!(
            ctx_accuracy >= majority,
            "{ds}: contextual accuracy {ctx_accuracy} under majority rate {majority}"
        );
        let zs_pairs = accuracy_pairs(&store, &index, "echo", ds, PredictionMode::ZeroShot, None);
        let zs_accuracy =
            zs_pairs.iter().filter(|(p, a)| p == a).count() as f64 / zs_pairs.len() as f64;
        contextual_total += ctx_accuracy;
        zero_shot_total += zs_accuracy;
    }
    assert!(
        contextual_total > zero_shot_total,
        "the report card must improve mean accuracy ({contextual_total} vs {zero_shot_total})"
    );
    pass(6, "calibration re-enactment (zero-shot identity, contextual lift)");
}

// --- 7. routing invariants ----------------------------------------------

struct CountingTablePredictor {
    outcomes: HashMap<String, Result<Grade, ()>>,
    calls: AtomicUsize,
}

#[async_trait::async_trait]
impl RoutePredictor for CountingTablePredictor {
    async fn predict_grade(
        &self,
        model: &ModelRef,
        _query: &Query,
    ) -> Result<Grade, prescore_core::predictor::PredictorError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        match self.outcomes[&model.id] {
            Ok(grade) => Ok(grade),
            Err(()) => Err(prescore_core::predictor::PredictorError::NoBackend {
                model: model.id.clone(),
            }),
        }
    }
}

#[tokio::test]
async fn criterion_07_routing_invariants() {
    let started = Instant::now();
    let mut rng = Lcg::new(7);
    let query = Query::new("q", "live", "route me");
    for round in 0..200 {
        let size = rng.below(5) as usize + 1;
        let mut ranks = BTreeSet::new();
        while ranks.len() < size {
            ranks.insert(rng.below(1000) as u32);
        }
        let models: Vec<ModelRef> = ranks
            .iter()
            .enumerate()
            .map(|(i, rank)| ModelRef::new(format!("m{i}"), *rank, false))
            .collect();
        let mut outcomes = HashMap::new();
        for model in &models {
            let outcome = match rng.below(4) {
                0 => Err(()),
                _ => Ok(rng.grade()),
            };
            outcomes.insert(model.id.clone(), outcome);
        }
        let threshold = if rng.below(2) == 0 { Grade::Ok } else { Grade::Great };
        let ladder = Ladder::new(models.clone(), threshold).unwrap();
        let predictor = CountingTablePredictor {
            outcomes: outcomes.clone(),
            calls: AtomicUsize::new(0),
        };
        let decision = decide(&query, &ladder, &predictor).await;

        // Oracle: the cheapest model whose prediction meets the threshold.
        let qualifying = ladder.models().iter().position(|m| {
            matches!(outcomes[&m.id], Ok(g) if g >= threshold)
        });
        match qualifying {
            Some(index) => {
                // Minimality and short-circuit: the cheapest qualifier is
                // chosen and nothing beyond it was consulted.
                assert_eq!(decision.chosen.id, ladder.models()[index].id, "round {round}");
                assert!(!decision.fallback);
                assert_eq!(decision.trail.len(), index + 1);
                assert_eq!(decision.predicted, Some(outcomes[&decision.chosen.id].unwrap()));
            }
            None => {
                // Fallback: every rung consulted, most capable model wins.
                assert!(decision.fallback, "round {round}");
                assert_eq!(decision.chosen.id, ladder.models().last().unwrap().id);
                assert_eq!(decision.trail.len(), ladder.models().len());
                let last_outcome = outcomes[&decision.chosen.id];
                assert_eq!(decision.predicted, last_outcome.ok());
            }
        }
        // Cost accounting: one predictor call per trail entry.
        assert_eq!(predictor.calls.load(Ordering::Relaxed), decision.trail.len());

        // Monotone threshold: demanding "great" never routes cheaper than
        // demanding "ok" on the same profile.
        let ladder_ok = Ladder::new(models.clone(), Grade::Ok).unwrap();
        let ladder_great = Ladder::new(models.clone(), Grade::Great).unwrap();
        let fresh = |outcomes: &HashMap<String, Result<Grade, ()>>| CountingTablePredictor {
            outcomes: outcomes.clone(),
            calls: AtomicUsize::new(0),
        };
        let at_ok = decide(&query, &ladder_ok, &fresh(&outcomes)).await;
        let at_great = decide(&query, &ladder_great, &fresh(&outcomes)).await;
        assert!(
            at_great.chosen.cost_rank >= at_ok.chosen.cost_rank,
            "round {round}: raising the threshold routed cheaper"
        );
    }
    assert!(started.elapsed() < Duration::from_secs(10), "criterion must finish inside 10s");
    pass(7, "routing invariants (200 randomized ladders)");
}

// --- 8. hindsight export conservation -----------------------------------

#[test]
fn criterion_08_hindsight_conservation() {
    let templates = TemplateSet::builtin().unwrap();
    let mut rng = Lcg::new(8);
    for round in 0..100 {
        let n = rng.below(31) as usize + 10;
        let queries: Vec<Query> = (0..n)
            .map(|i| {
                Query::new(
                    format!("item-{i:03}"),
                    if i % 2 == 0 { "alpha" } else { "beta" },
                    format!("Please answer probe item-{i:03} in full."),
                )
            })
            .collect();
        let corpus = Corpus::from_queries(queries).unwrap();
        let store = RecordStore::in_memory();
        // Zero to two evaluations per query; the latest one is binding.
        let mut latest: HashMap<String, Grade> = HashMap::new();
        for i in 0..n {
            let id = format!("item-{i:03}");
            for _ in 0..rng.below(3) {
                let grade = rng.grade();
                store.append(Record::Evaluation(evaluation(&id, "m", grade))).unwrap();
                latest.insert(id.clone(), grade);
            }
        }
        let split = prescore_core::corpus::split_corpus(&corpus, round as u64, 0.75).unwrap();
        let records = build_sft_dataset(&store, &corpus, "m", &split, &templates).unwrap();

        // Conservation: one example per evaluated train query, and the
        // target distribution equals the training-split grade distribution.
        let train_set = split.train_set();
        let mut expected: BTreeMap<Grade, usize> = BTreeMap::new();
        for (id, grade) in &latest {
            if train_set.contains(id) {
                *expected.entry(*grade).or_default() += 1;
            }
        }
        let mut exported: BTreeMap<Grade, usize> = BTreeMap::new();
        for record in &records {
            let target: Grade = record.messages.last().unwrap().content.parse().unwrap();
            *exported.entry(target).or_default() += 1;
        }
        assert_eq!(exported, expected, "round {round}: target distribution drifted");
        assert_eq!(records.len(), expected.values().sum::<usize>());

        // Zero test leakage: no test query's text appears in any turn.
        for test_id in &split.test {
            let text = &corpus.get(test_id).unwrap().text;
            for record in &records {
                assert!(
                    record.messages.iter().all(|m| !m.content.contains(text)),
                    "round {round}: test query {test_id} leaked into the export"
                );
            }
        }
    }
    pass(8, "hindsight export conservation (100 randomized stores)");
}

// --- 9. split determinism ------------------------------------------------

#[test]
fn criterion_09_split_determinism() {
    let ids: Vec<String> = (0..1000).map(|i| format!("q{i:04}")).collect();

    // Stable across repeated runs.
    let baseline = split_ids(ids.clone(), 42, 0.75).unwrap();
    for _ in 0..9 {
        let again = split_ids(ids.clone(), 42, 0.75).unwrap();
        assert_eq!(again.train, baseline.train);
        assert_eq!(again.test, baseline.test);
    }

    // Stable across input permutations.
    let mut rng = Lcg::new(9);
    for _ in 0..5 {
        let mut shuffled = ids.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let permuted = split_ids(shuffled, 42, 0.75).unwrap();
        assert_eq!(permuted.train, baseline.train);
        assert_eq!(permuted.test, baseline.test);
    }

    // And equal to the frozen fixture.
    let fixture: Split =
        serde_json::from_str(include_str!("../../core/tests/fixtures/split_seed42_n1000.json"))
            .unwrap();
    assert_eq!(baseline.train, fixture.train);
    assert_eq!(baseline.test, fixture.test);
    pass(9, "split determinism (10 runs, permutations, golden fixture)");
}

// --- 10. gateway conformance ---------------------------------------------

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_10_gateway_conformance() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("records.jsonl");
    let config = format!(
        r#"
        store = "{}"

        [judge]
        model = "grader"

        [[models]]
        id = "grader"
        cost_rank = 99
        routed = false
        [models.scripted]
        kind = "marker_judge"

        [[models]]
        id = "small"
        cost_rank = 1
        [models.scripted]
        kind = "quality_responder"

        [[models]]
        id = "large"
        cost_rank = 2
        [models.scripted]
        kind = "quality_responder"
        "#,
        store_path.display()
    );
    let config = PipelineConfig::from_toml(&config, "test").unwrap();
    let pipeline = Pipeline::from_config(config).unwrap();
    let app = prescore::gateway::build(&pipeline).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });

    let client = reqwest::Client::new();
    let mut tasks = Vec::new();
    for i in 0..50 {
        let client = client.clone();
        tasks.push(tokio::spawn(async move {
            let response = client
                .post(format!("http://{addr}/v1/chat/completions"))
                .json(&serde_json::json!({
                    "messages": [
                        { "role": "system", "content": "Be concise." },
                        { "role": "user", "content": format!("Gateway probe number {i} of fifty.") },
                    ],
                }))
                .send()
                .await
                .unwrap();
            assert_eq!(response.status(), 200, "probe {i}");
            let headers = response.headers().clone();
            let body: serde_json::Value = response.json().await.unwrap();
            (headers, body)
        }));
    }

    let mut seen_seqs = BTreeSet::new();
    let mut by_query_id: HashMap<String, (String, String, String)> = HashMap::new();
    for task in tasks {
        let (headers, body) = task.await.unwrap();
        let routed_model = headers["x-routed-model"].to_str().unwrap().to_string();
        let predicted = headers["x-predicted-grade"].to_str().unwrap().to_string();
        let fallback = headers["x-fallback"].to_str().unwrap().to_string();
        // Headers and body tell the same story.
        assert_eq!(body["model"].as_str().unwrap(), routed_model);
        let routing = &body["routing"];
        assert_eq!(
            routing["fallback"].as_bool().unwrap(),
            fallback == "true"
        );
        match routing["predicted"].as_str() {
            Some(token) => assert_eq!(token, predicted),
            None => assert_eq!(predicted, "none"),
        }
        assert!(!body["choices"][0]["message"]["content"]
            .as_str()
            .unwrap()
            .is_empty());
        let seq = routing["record_seq"].as_u64().unwrap();
        assert!(seen_seqs.insert(seq), "duplicate audit sequence {seq}");
        by_query_id.insert(
            routing["query_id"].as_str().unwrap().to_string(),
            (routed_model, predicted, fallback),
        );
    }
    assert_eq!(seen_seqs.len(), 50);
    assert_eq!(*seen_seqs.iter().next().unwrap(), 1);
    assert_eq!(*seen_seqs.iter().last().unwrap(), 50);
    assert_eq!(by_query_id.len(), 50, "every probe got a distinct query id");
    server.abort();

    // The audit log replays cleanly and matches what the clients saw.
    let reopened = RecordStore::open(&store_path).unwrap();
    let records = reopened.records();
    assert_eq!(records.len(), 50);
    for record in records {
        match record {
            StoreRecord::Routing {
                query_id,
                chosen,
                predicted,
                fallback,
                trail,
                ..
            } => {
                let (model, predicted_header, fallback_header) = &by_query_id[&query_id];
                assert_eq!(&chosen, model);
                assert_eq!(&fallback.to_string(), fallback_header);
                match predicted {
                    Some(grade) => assert_eq!(&grade.to_string(), predicted_header),
                    None => assert_eq!(predicted_header, "none"),
                }
                assert!(!trail.is_empty());
            }
            other => panic!("expected only routing records, got {other:?}"),
        }
    }
    pass(10, "gateway conformance (50 concurrent routed requests)");
}

// The store-level prediction record drops raw text by design; this quick
// compile-time-ish check keeps the acceptance suite honest about which
// record shape it is asserting on elsewhere.
#[test]
fn prediction_records_stay_compact() {
    let store = RecordStore::in_memory();
    store
        .append(Record::Prediction(Prediction {
            query_id: "q".into(),
            model: "m".into(),
            predicted: Grade::Ok,
            prediction_mode: PredictionMode::ZeroShot,
            raw_text: Some("the raw reply".into()),
        }))
        .unwrap();
    let json = serde_json::to_value(&store.records()[0]).unwrap();
    assert!(json.get("raw_text").is_none());
}

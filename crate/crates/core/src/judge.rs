//! LLM-judge orchestration: building evaluation prompts, parsing structured
//! verdicts (with one correction round), and mapping anonymous response
//! labels back to models.
//!
//! Responses are always shown to the judge under anonymous labels `R1..RN`
//! in a per-query shuffled order, so nothing about a model's identity or a
//! stable position can leak into its grade. The judge must answer with a
//! JSON object keyed by those labels; output that cannot be parsed earns
//! exactly one correction request before the evaluation fails. A single
//! evaluation therefore never costs more than two judge calls.

use crate::backend::{BackendError, ChatBackend, ChatMessage};
use crate::grade::{parse_grade, Grade};
use crate::prompt::{Bindings, PromptError, TemplateSet};
use crate::registry::Registry;
use crate::rng::{fnv1a64, shuffle, Xoshiro256StarStar};
use crate::types::{Evaluation, JudgingMode, Query};
use async_trait::async_trait;
use serde_json::Value;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("invalid judge request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    /// The judge's output still did not parse after the one allowed
    /// correction round.
    #[error("judge output unparseable even after correction: {last}")]
    UnparseableVerdict {
        #[source]
        last: VerdictParseError,
        /// The verbatim final judge output, for debugging.
        raw: String,
    },
    #[error("verdict contains label {0:?} that maps to no model")]
    UnknownLabel(String),
}

/// Why a judge reply failed to parse as a structured verdict.
#[derive(Debug, Clone, Error)]
pub enum VerdictParseError {
    #[error("no JSON object found in judge output")]
    NotStructured,
    #[error("verdict is missing label {0:?}")]
    MissingLabel(String),
    #[error("verdict mentions unexpected label {0:?}")]
    UnexpectedLabel(String),
    #[error("verdict gives label {label:?} the unrecognized grade {token:?}")]
    BadGrade { label: String, token: String },
    #[error("verdict gives label {0:?} an empty rationale")]
    EmptyRationale(String),
}

/// One query's worth of labeled responses, ready for a judge.
#[derive(Debug, Clone)]
pub struct JudgeRequest {
    pub query: Query,
    /// `(label, response text)` pairs in presentation order.
    pub labeled_responses: Vec<(String, String)>,
    /// Template id of the rubric to grade under.
    pub rubric_id: String,
    pub judging_mode: JudgingMode,
}

impl JudgeRequest {
    pub fn new(
        query: Query,
        labeled_responses: Vec<(String, String)>,
        rubric_id: impl Into<String>,
        judging_mode: JudgingMode,
    ) -> Result<Self, JudgeError> {
        let request = JudgeRequest {
            query,
            labeled_responses,
            rubric_id: rubric_id.into(),
            judging_mode,
        };
        request.validate()?;
        Ok(request)
    }

    fn validate(&self) -> Result<(), JudgeError> {
        if self.labeled_responses.is_empty() {
            return Err(JudgeError::InvalidRequest(
                "at least one labeled response is required".into(),
            ));
        }
        if self.judging_mode == JudgingMode::Independent && self.labeled_responses.len() != 1 {
            return Err(JudgeError::InvalidRequest(format!(
                "independent judging grades exactly one response, got {}",
                self.labeled_responses.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (label, _) in &self.labeled_responses {
            if label.trim().is_empty() {
                return Err(JudgeError::InvalidRequest("empty response label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(JudgeError::InvalidRequest(format!(
                    "duplicate response label {label:?}"
                )));
            }
        }
        Ok(())
    }

    fn labels(&self) -> Vec<String> {
        self.labeled_responses
            .iter()
            .map(|(l, _)| l.clone())
            .collect()
    }
}

/// The judge's grade and rationale for one labeled response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictEntry {
    pub grade: Grade,
    pub rationale: String,
}

/// A parsed judge verdict: one entry per label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JudgeVerdict {
    entries: BTreeMap<String, VerdictEntry>,
}

impl JudgeVerdict {
    pub fn get(&self, label: &str) -> Option<&VerdictEntry> {
        self.entries.get(label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by label.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &VerdictEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Formats labeled responses as delimited blocks for a judge prompt.
pub fn format_response_block(labeled_responses: &[(String, String)]) -> String {
    let blocks: Vec<String> = labeled_responses
        .iter()
        .map(|(label, text)| format!("### Response {label}\n{text}\n### End {label}"))
        .collect();
    blocks.join("\n\n")
}

/// The JSON shape the judge is asked to produce for the given labels.
pub fn verdict_schema(labels: &[String]) -> String {
    let entries: Vec<String> = labels
        .iter()
        .map(|label| {
            format!(
                "  {}: {{\"grade\": \"bad | ok | great\", \"rationale\": \"<why this grade>\"}}",
                serde_json::to_string(label).expect("labels serialize")
            )
        })
        .collect();
    format!("{{\n{}\n}}", entries.join(",\n"))
}

/// Extracts and validates a structured verdict from free-form judge output.
///
/// Every balanced `{...}` span in the text is tried in order (so prose,
/// code fences, or an echoed schema before the real verdict do not break
/// parsing). A candidate must contain exactly the expected labels, each
/// with a parseable grade and a non-empty rationale. If no candidate fully
/// validates, the error from the first JSON object found is reported — or
/// [`VerdictParseError::NotStructured`] when there is none.
pub fn parse_verdict(
    text: &str,
    expected_labels: &[String],
) -> Result<JudgeVerdict, VerdictParseError> {
    let mut first_error: Option<VerdictParseError> = None;
    let bytes = text.as_bytes();
    for start in 0..bytes.len() {
        if bytes[start] != b'{' {
            continue;
        }
        let Some(end) = balanced_object_end(text, start) else {
            continue;
        };
        let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&text[start..=end]) else {
            continue;
        };
        match validate_verdict(&map, expected_labels) {
            Ok(verdict) => return Ok(verdict),
            Err(err) => {
                first_error.get_or_insert(err);
            }
        }
    }
    Err(first_error.unwrap_or(VerdictParseError::NotStructured))
}

/// Finds the end of the balanced object starting at `start`, skipping
/// braces inside JSON strings (including escaped quotes).
fn balanced_object_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn validate_verdict(
    map: &serde_json::Map<String, Value>,
    expected_labels: &[String],
) -> Result<JudgeVerdict, VerdictParseError> {
    for key in map.keys() {
        if !expected_labels.iter().any(|l| l == key) {
            return Err(VerdictParseError::UnexpectedLabel(key.clone()));
        }
    }
    let mut entries = BTreeMap::new();
    for label in expected_labels {
        let entry = map
            .get(label)
            .ok_or_else(|| VerdictParseError::MissingLabel(label.clone()))?;
        let grade_value = entry.get("grade");
        let grade_text = grade_value.and_then(Value::as_str).ok_or_else(|| {
            VerdictParseError::BadGrade {
                label: label.clone(),
                token: grade_value.map(Value::to_string).unwrap_or_default(),
            }
        })?;
        let grade = parse_grade(grade_text).map_err(|_| VerdictParseError::BadGrade {
            label: label.clone(),
            token: grade_text.to_string(),
        })?;
        let rationale = entry
            .get("rationale")
            .and_then(Value::as_str)
            .map(str::trim)
            .unwrap_or_default();
        if rationale.is_empty() {
            return Err(VerdictParseError::EmptyRationale(label.clone()));
        }
        entries.insert(
            label.clone(),
            VerdictEntry {
                grade,
                rationale: rationale.to_string(),
            },
        );
    }
    Ok(JudgeVerdict { entries })
}

/// Runs one evaluation against the judge: render the prompt, parse the
/// verdict, and on a parse failure send exactly one correction request
/// built from the judge's own output. Two failures in a row surface as
/// [`JudgeError::UnparseableVerdict`]; the judge is never called a third
/// time.
pub async fn evaluate(
    request: &JudgeRequest,
    judge: &dyn ChatBackend,
    templates: &TemplateSet,
) -> Result<JudgeVerdict, JudgeError> {
    request.validate()?;
    let labels = request.labels();
    let schema = verdict_schema(&labels);
    let rubric = templates.render(&request.rubric_id, &Bindings::new())?;
    let template_id = match request.judging_mode {
        JudgingMode::Combined => "combined_evaluation",
        JudgingMode::Independent => "independent_evaluation",
    };
    let prompt = templates.render(
        template_id,
        &Bindings::new()
            .with("query", &request.query.text)
            .with(
                "reference_answer",
                request.query.reference_answer.as_deref().unwrap_or(""),
            )
            .with("rubric", rubric)
            .with("responses", format_response_block(&request.labeled_responses))
            .with("schema", &schema),
    )?;
    let system = templates.render("evaluator_system", &Bindings::new())?;
    let raw = judge
        .chat(&[ChatMessage::system(&system), ChatMessage::user(prompt)])
        .await?;
    match parse_verdict(&raw, &labels) {
        Ok(verdict) => Ok(verdict),
        Err(_) => {
            let correction = templates.render(
                "json_correction",
                &Bindings::new().with("original", &raw).with("schema", &schema),
            )?;
            let raw2 = judge
                .chat(&[ChatMessage::system(&system), ChatMessage::user(correction)])
                .await?;
            parse_verdict(&raw2, &labels)
                .map_err(|last| JudgeError::UnparseableVerdict { last, raw: raw2 })
        }
    }
}

/// Assigns anonymous labels `R1..RN` to models in a shuffled order.
///
/// The model ids are sorted first, so the result depends only on the set
/// of ids and the seed — never on input order. Returns `(label, model id)`
/// pairs in presentation order.
pub fn anonymize_labels(model_ids: &[String], seed: u64) -> Vec<(String, String)> {
    let mut ids: Vec<String> = model_ids.to_vec();
    ids.sort();
    let mut rng = Xoshiro256StarStar::from_seed(seed);
    shuffle(&mut rng, &mut ids);
    ids.into_iter()
        .enumerate()
        .map(|(i, model)| (format!("R{}", i + 1), model))
        .collect()
}

/// Fields shared by every evaluation produced in one judging pass.
#[derive(Debug, Clone)]
pub struct EvaluationContext {
    pub query_id: String,
    pub judging_mode: JudgingMode,
    pub rubric_id: String,
    pub judge_model: String,
}

/// Maps a labeled verdict back to per-model evaluations using the label
/// assignment that built the prompt. Output is sorted by model id.
pub fn de_anonymize(
    verdict: &JudgeVerdict,
    label_to_model: &[(String, String)],
    ctx: &EvaluationContext,
) -> Result<Vec<Evaluation>, JudgeError> {
    let mut evaluations = Vec::with_capacity(label_to_model.len());
    for (label, model) in label_to_model {
        let entry = verdict
            .get(label)
            .ok_or_else(|| JudgeError::UnknownLabel(label.clone()))?;
        evaluations.push(Evaluation {
            query_id: ctx.query_id.clone(),
            model: model.clone(),
            grade: entry.grade,
            rationale: entry.rationale.clone(),
            judging_mode: ctx.judging_mode,
            rubric_id: ctx.rubric_id.clone(),
            judge_model: ctx.judge_model.clone(),
        });
    }
    evaluations.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(evaluations)
}

/// Everything a judging strategy needs besides the query and responses.
pub struct JudgeContext<'a> {
    pub judge: &'a dyn ChatBackend,
    pub templates: &'a TemplateSet,
    /// Template id of the rubric to grade under.
    pub rubric_id: &'a str,
    /// Run-level seed mixed with the query id to shuffle labels.
    pub label_seed: u64,
}

impl JudgeContext<'_> {
    /// The label-shuffle seed for one query: stable for a given query and
    /// run seed, different across queries.
    fn seed_for(&self, query: &Query) -> u64 {
        fnv1a64(query.id.as_bytes()) ^ self.label_seed
    }
}

/// A pluggable way of turning collected responses into evaluations.
#[async_trait]
pub trait JudgingStrategy: Send + Sync {
    /// Registry name of this strategy.
    fn name(&self) -> &'static str;
    fn mode(&self) -> JudgingMode;

    /// Grades all responses (keyed by model id) to one query.
    async fn evaluate_query(
        &self,
        ctx: &JudgeContext<'_>,
        query: &Query,
        responses: &BTreeMap<String, String>,
    ) -> Result<Vec<Evaluation>, JudgeError>;
}

/// Grades all responses to a query in a single judge call, so the judge
/// can compare them before committing to grades.
pub struct CombinedJudging;

/// Grades each response in its own judge call, in isolation.
pub struct IndependentJudging;

#[async_trait]
impl JudgingStrategy for CombinedJudging {
    fn name(&self) -> &'static str {
        "combined"
    }

    fn mode(&self) -> JudgingMode {
        JudgingMode::Combined
    }

    async fn evaluate_query(
        &self,
        ctx: &JudgeContext<'_>,
        query: &Query,
        responses: &BTreeMap<String, String>,
    ) -> Result<Vec<Evaluation>, JudgeError> {
        if responses.is_empty() {
            return Err(JudgeError::InvalidRequest(format!(
                "no responses to judge for query {:?}",
                query.id
            )));
        }
        let model_ids: Vec<String> = responses.keys().cloned().collect();
        let assignment = anonymize_labels(&model_ids, ctx.seed_for(query));
        let labeled: Vec<(String, String)> = assignment
            .iter()
            .map(|(label, model)| (label.clone(), responses[model].clone()))
            .collect();
        let request = JudgeRequest::new(
            query.clone(),
            labeled,
            ctx.rubric_id,
            JudgingMode::Combined,
        )?;
        let verdict = evaluate(&request, ctx.judge, ctx.templates).await?;
        de_anonymize(
            &verdict,
            &assignment,
            &EvaluationContext {
                query_id: query.id.clone(),
                judging_mode: JudgingMode::Combined,
                rubric_id: ctx.rubric_id.to_string(),
                judge_model: ctx.judge.model_id().to_string(),
            },
        )
    }
}

#[async_trait]
impl JudgingStrategy for IndependentJudging {
    fn name(&self) -> &'static str {
        "independent"
    }

    fn mode(&self) -> JudgingMode {
        JudgingMode::Independent
    }

    async fn evaluate_query(
        &self,
        ctx: &JudgeContext<'_>,
        query: &Query,
        responses: &BTreeMap<String, String>,
    ) -> Result<Vec<Evaluation>, JudgeError> {
        if responses.is_empty() {
            return Err(JudgeError::InvalidRequest(format!(
                "no responses to judge for query {:?}",
                query.id
            )));
        }
        let mut evaluations = Vec::with_capacity(responses.len());
        for (model, response) in responses {
            let assignment = vec![("R1".to_string(), model.clone())];
            let request = JudgeRequest::new(
                query.clone(),
                vec![("R1".to_string(), response.clone())],
                ctx.rubric_id,
                JudgingMode::Independent,
            )?;
            let verdict = evaluate(&request, ctx.judge, ctx.templates).await?;
            evaluations.extend(de_anonymize(
                &verdict,
                &assignment,
                &EvaluationContext {
                    query_id: query.id.clone(),
                    judging_mode: JudgingMode::Independent,
                    rubric_id: ctx.rubric_id.to_string(),
                    judge_model: ctx.judge.model_id().to_string(),
                },
            )?);
        }
        evaluations.sort_by(|a, b| a.model.cmp(&b.model));
        Ok(evaluations)
    }
}

/// The built-in judging strategies, keyed by name.
pub fn judging_registry() -> Registry<dyn JudgingStrategy> {
    let mut registry: Registry<dyn JudgingStrategy> = Registry::new("judging strategy");
    registry
        .register("combined", Arc::new(CombinedJudging))
        .expect("fresh registry");
    registry
        .register("independent", Arc::new(IndependentJudging))
        .expect("fresh registry");
    registry
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{
        ContainsRule, ScriptedBackend, ScriptedBehavior,
    };

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn templates() -> TemplateSet {
        TemplateSet::builtin().unwrap()
    }

    #[test]
    fn response_block_and_schema_have_expected_shape() {
        let block = format_response_block(&[
            ("R1".into(), "first".into()),
            ("R2".into(), "second".into()),
        ]);
        assert_eq!(
            block,
            "### Response R1\nfirst\n### End R1\n\n### Response R2\nsecond\n### End R2"
        );
        let schema = verdict_schema(&labels(&["R1", "R2"]));
        assert!(schema.contains("\"R1\": {\"grade\""));
        assert!(schema.contains("\"R2\""));
    }

    #[test]
    fn parse_accepts_plain_fenced_and_prose_wrapped_json() {
        let expected = labels(&["R1"]);
        let plain = r#"{"R1": {"grade": "great", "rationale": "sound"}}"#;
        assert_eq!(
            parse_verdict(plain, &expected).unwrap().get("R1").unwrap().grade,
            Grade::Great
        );
        let fenced = "Here you go:\n```json\n{\"R1\": {\"grade\": \"ok\", \"rationale\": \"meh\"}}\n```\nDone.";
        assert_eq!(
            parse_verdict(fenced, &expected).unwrap().get("R1").unwrap().grade,
            Grade::Ok
        );
        let noisy = "I think { this is R1 } hmm {\"R1\": {\"grade\": \"bad\", \"rationale\": \"wrong {braces} inside\"}} trailing";
        assert_eq!(
            parse_verdict(noisy, &expected).unwrap().get("R1").unwrap().grade,
            Grade::Bad
        );
    }

    #[test]
    fn parse_handles_escaped_quotes_inside_rationales() {
        let expected = labels(&["R1"]);
        let tricky =
            r#"{"R1": {"grade": "ok", "rationale": "says \"maybe {\" which is odd"}}"#;
        let verdict = parse_verdict(tricky, &expected).unwrap();
        assert!(verdict.get("R1").unwrap().rationale.contains("maybe"));
    }

    #[test]
    fn parse_skips_an_echoed_schema_before_the_real_verdict() {
        let expected = labels(&["R1"]);
        let text = "The shape is {\"R1\": {\"grade\": \"bad | ok | great\", \"rationale\": \"<why>\"}} so:\n\
                    {\"R1\": {\"grade\": \"great\", \"rationale\": \"checks out\"}}";
        assert_eq!(
            parse_verdict(text, &expected).unwrap().get("R1").unwrap().grade,
            Grade::Great
        );
    }

    #[test]
    fn parse_reports_the_right_failure() {
        let expected = labels(&["R1", "R2"]);
        assert!(matches!(
            parse_verdict("no json here", &expected),
            Err(VerdictParseError::NotStructured)
        ));
        let missing = r#"{"R1": {"grade": "ok", "rationale": "fine"}}"#;
        assert!(matches!(
            parse_verdict(missing, &expected),
            Err(VerdictParseError::MissingLabel(l)) if l == "R2"
        ));
        let extra = r#"{"R1": {"grade": "ok", "rationale": "x"}, "R2": {"grade": "ok", "rationale": "x"}, "R3": {"grade": "ok", "rationale": "x"}}"#;
        assert!(matches!(
            parse_verdict(extra, &expected),
            Err(VerdictParseError::UnexpectedLabel(l)) if l == "R3"
        ));
        let bad_grade = r#"{"R1": {"grade": "excellent", "rationale": "x"}, "R2": {"grade": "ok", "rationale": "x"}}"#;
        assert!(matches!(
            parse_verdict(bad_grade, &expected),
            Err(VerdictParseError::BadGrade { token, .. }) if token == "excellent"
        ));
        let no_rationale = r#"{"R1": {"grade": "ok", "rationale": "  "}, "R2": {"grade": "ok", "rationale": "x"}}"#;
        assert!(matches!(
            parse_verdict(no_rationale, &expected),
            Err(VerdictParseError::EmptyRationale(l)) if l == "R1"
        ));
    }

    #[test]
    fn label_assignment_is_deterministic_and_order_free() {
        let a = anonymize_labels(&labels(&["m3", "m1", "m2"]), 7);
        let b = anonymize_labels(&labels(&["m1", "m2", "m3"]), 7);
        assert_eq!(a, b);
        let mut assigned_labels: Vec<&str> = a.iter().map(|(l, _)| l.as_str()).collect();
        assigned_labels.sort_unstable();
        assert_eq!(assigned_labels, vec!["R1", "R2", "R3"]);
        // Some seed must move a model off its sorted position.
        let moved = (0..64).any(|seed| {
            anonymize_labels(&labels(&["m1", "m2", "m3"]), seed)
                .iter()
                .any(|(l, m)| (l == "R1") != (m == "m1"))
        });
        assert!(moved, "shuffle never permuted anything across 64 seeds");
    }

    fn verdict_of(pairs: &[(&str, Grade)]) -> JudgeVerdict {
        let mut entries = BTreeMap::new();
        for (label, grade) in pairs {
            entries.insert(
                label.to_string(),
                VerdictEntry {
                    grade: *grade,
                    rationale: "because".into(),
                },
            );
        }
        JudgeVerdict { entries }
    }

    #[test]
    fn de_anonymize_maps_labels_back_to_models() {
        let verdict = verdict_of(&[("R1", Grade::Bad), ("R2", Grade::Great)]);
        let assignment = vec![
            ("R1".to_string(), "m-z".to_string()),
            ("R2".to_string(), "m-a".to_string()),
        ];
        let ctx = EvaluationContext {
            query_id: "q1".into(),
            judging_mode: JudgingMode::Combined,
            rubric_id: "rubric".into(),
            judge_model: "judge".into(),
        };
        let evals = de_anonymize(&verdict, &assignment, &ctx).unwrap();
        assert_eq!(evals.len(), 2);
        // Sorted by model id, grades still attached to the right model.
        assert_eq!(evals[0].model, "m-a");
        assert_eq!(evals[0].grade, Grade::Great);
        assert_eq!(evals[1].model, "m-z");
        assert_eq!(evals[1].grade, Grade::Bad);
        assert_eq!(evals[0].judge_model, "judge");
    }

    #[test]
    fn independent_requests_take_exactly_one_response() {
        let query = Query::new("q", "d", "text");
        let err = JudgeRequest::new(
            query,
            vec![("R1".into(), "a".into()), ("R2".into(), "b".into())],
            "rubric",
            JudgingMode::Independent,
        )
        .unwrap_err();
        assert!(matches!(err, JudgeError::InvalidRequest(_)));
    }

    fn marker_judge() -> ScriptedBackend {
        ScriptedBackend::new("judge", ScriptedBehavior::MarkerJudge { default: Grade::Bad })
    }

    fn request_with(texts: &[(&str, &str)]) -> JudgeRequest {
        JudgeRequest::new(
            Query::new("q1", "d", "the question"),
            texts
                .iter()
                .map(|(l, t)| (l.to_string(), t.to_string()))
                .collect(),
            "rubric",
            JudgingMode::Combined,
        )
        .unwrap()
    }

    #[tokio::test]
    async fn evaluate_parses_a_clean_verdict_in_one_call() {
        let judge = marker_judge();
        let request = request_with(&[("R1", "fine answer QUALITY:ok"), ("R2", "QUALITY:great!")]);
        let verdict = evaluate(&request, &judge, &templates()).await.unwrap();
        assert_eq!(verdict.get("R1").unwrap().grade, Grade::Ok);
        assert_eq!(verdict.get("R2").unwrap().grade, Grade::Great);
        assert_eq!(judge.call_count(), 1);
    }

    #[tokio::test]
    async fn evaluate_recovers_with_exactly_one_correction() {
        // First call matches no rule -> prose; the correction request
        // (which embeds the "could not be parsed" phrasing) gets JSON.
        let judge = ScriptedBackend::new(
            "judge",
            ScriptedBehavior::ContainsRules {
                rules: vec![ContainsRule {
                    needle: "could not be parsed".into(),
                    response: r#"{"R1": {"grade": "ok", "rationale": "fixed"}}"#.into(),
                }],
                default: Some("I refuse to answer in JSON.".into()),
            },
        );
        let request = request_with(&[("R1", "whatever")]);
        let verdict = evaluate(&request, &judge, &templates()).await.unwrap();
        assert_eq!(verdict.get("R1").unwrap().grade, Grade::Ok);
        assert_eq!(judge.call_count(), 2);
    }

    #[tokio::test]
    async fn evaluate_gives_up_after_two_failures() {
        let judge = ScriptedBackend::new(
            "judge",
            ScriptedBehavior::Fixed {
                text: "never json".into(),
            },
        );
        let request = request_with(&[("R1", "whatever")]);
        let err = evaluate(&request, &judge, &templates()).await.unwrap_err();
        assert!(matches!(err, JudgeError::UnparseableVerdict { .. }));
        assert_eq!(judge.call_count(), 2, "budget is exactly two judge calls");
    }

    #[tokio::test]
    async fn combined_strategy_round_trips_grades_through_anonymization() {
        let judge = marker_judge();
        let tmpl = templates();
        let ctx = JudgeContext {
            judge: &judge,
            templates: &tmpl,
            rubric_id: "rubric",
            label_seed: 99,
        };
        let mut responses = BTreeMap::new();
        responses.insert("m-alpha".to_string(), "answer QUALITY:great x".to_string());
        responses.insert("m-beta".to_string(), "answer QUALITY:bad x".to_string());
        responses.insert("m-gamma".to_string(), "answer QUALITY:ok x".to_string());
        let query = Query::new("q7", "d", "question?");
        let evals = CombinedJudging
            .evaluate_query(&ctx, &query, &responses)
            .await
            .unwrap();
        assert_eq!(judge.call_count(), 1, "combined grades all responses at once");
        let by_model: BTreeMap<&str, Grade> =
            evals.iter().map(|e| (e.model.as_str(), e.grade)).collect();
        assert_eq!(by_model["m-alpha"], Grade::Great);
        assert_eq!(by_model["m-beta"], Grade::Bad);
        assert_eq!(by_model["m-gamma"], Grade::Ok);
        for e in &evals {
            assert_eq!(e.judging_mode, JudgingMode::Combined);
            assert!(!e.rationale.is_empty());
        }
        // Determinism: replaying the same query yields identical output.
        let again = CombinedJudging
            .evaluate_query(&ctx, &query, &responses)
            .await
            .unwrap();
        assert_eq!(evals, again);
    }

    #[tokio::test]
    async fn independent_strategy_makes_one_call_per_model() {
        let judge = marker_judge();
        let tmpl = templates();
        let ctx = JudgeContext {
            judge: &judge,
            templates: &tmpl,
            rubric_id: "rubric",
            label_seed: 99,
        };
        let mut responses = BTreeMap::new();
        responses.insert("m1".to_string(), "QUALITY:ok".to_string());
        responses.insert("m2".to_string(), "QUALITY:great".to_string());
        let query = Query::new("q8", "d", "question?");
        let evals = IndependentJudging
            .evaluate_query(&ctx, &query, &responses)
            .await
            .unwrap();
        assert_eq!(judge.call_count(), 2);
        assert_eq!(evals[0].model, "m1");
        assert_eq!(evals[0].grade, Grade::Ok);
        assert_eq!(evals[1].grade, Grade::Great);
        assert!(evals.iter().all(|e| e.judging_mode == JudgingMode::Independent));
    }

    #[test]
    fn registry_exposes_both_strategies() {
        let registry = judging_registry();
        assert_eq!(registry.names(), vec!["combined", "independent"]);
        assert_eq!(
            registry.expect("combined").unwrap().mode(),
            JudgingMode::Combined
        );
    }
}

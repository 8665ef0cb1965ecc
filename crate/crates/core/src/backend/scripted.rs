//! Deterministic scripted backends.
//!
//! A [`ScriptedBackend`] computes its reply as a pure function of the model
//! id and the final user message, records every call it receives, and can
//! be told to fail transiently a set number of times. Scripted backends
//! power the test suite end to end — including a scripted judge — and can
//! also be declared in config files for demo runs without live services.

use super::{validate_messages, BackendError, ChatBackend, ChatMessage, Role};
use crate::grade::Grade;
use crate::rng::fnv1a64;
use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::{Mutex, OnceLock};

/// The marker a [`ScriptedBehavior::QualityResponder`] embeds in its
/// answers and a [`ScriptedBehavior::MarkerJudge`] looks for when grading.
pub const QUALITY_MARKER: &str = "QUALITY:";

fn default_grade() -> Grade {
    Grade::Bad
}

/// A substring-triggered canned reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainsRule {
    /// Fires when the final user message contains this substring.
    pub needle: String,
    pub response: String,
}

/// How a scripted backend computes its reply from the final user message.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedBehavior {
    /// Always the same text.
    Fixed { text: String },
    /// First matching [`ContainsRule`] wins; without a match the optional
    /// default is used, and with no default the call fails.
    ContainsRules {
        rules: Vec<ContainsRule>,
        #[serde(default)]
        default: Option<String>,
    },
    /// Answers with a text that embeds a `QUALITY:<grade>` marker derived
    /// by hashing the model id and the message. A marker judge grades such
    /// answers by the marker, and a grade parser extracting a prediction
    /// from the same text finds exactly the marker grade.
    QualityResponder,
    /// Reads the report card embedded in a contextual prediction prompt,
    /// finds the entry whose family matches the `[dataset:<label>]` tag in
    /// the query text, and predicts that entry's grade. Falls back to
    /// `default` when tag or entry is missing.
    CardModeEcho {
        #[serde(default = "default_grade")]
        default: Grade,
    },
    /// A scripted judge: grades every labeled response block in the prompt
    /// by its embedded quality marker (or `default` without one) and emits
    /// a structured verdict.
    MarkerJudge {
        #[serde(default = "default_grade")]
        default: Grade,
    },
}

/// One recorded call to a scripted backend.
#[derive(Debug, Clone)]
pub struct ScriptedCall {
    pub messages: Vec<ChatMessage>,
    pub outcome: ScriptedOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedOutcome {
    Responded(String),
    InjectedFailure,
    NoRuleMatched,
}

pub struct ScriptedBackend {
    model_id: String,
    behavior: ScriptedBehavior,
    failures_remaining: Mutex<u32>,
    calls: Mutex<Vec<ScriptedCall>>,
}

impl ScriptedBackend {
    pub fn new(model_id: impl Into<String>, behavior: ScriptedBehavior) -> Self {
        ScriptedBackend {
            model_id: model_id.into(),
            behavior,
            failures_remaining: Mutex::new(0),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Makes the next `n` calls fail with a transient transport error.
    pub fn inject_failures(&self, n: u32) {
        *self.failures_remaining.lock().unwrap() = n;
    }

    /// Snapshot of every call received so far, in order.
    pub fn calls(&self) -> Vec<ScriptedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    fn respond(&self, final_user: &str) -> Option<String> {
        match &self.behavior {
            ScriptedBehavior::Fixed { text } => Some(text.clone()),
            ScriptedBehavior::ContainsRules { rules, default } => rules
                .iter()
                .find(|r| final_user.contains(&r.needle))
                .map(|r| r.response.clone())
                .or_else(|| default.clone()),
            ScriptedBehavior::QualityResponder => {
                Some(quality_response(&self.model_id, final_user))
            }
            ScriptedBehavior::CardModeEcho { default } => {
                let grade = query_dataset_tag(final_user)
                    .and_then(|dataset| card_entry_grade(final_user, &dataset))
                    .unwrap_or(*default);
                Some(format!(
                    "Consulting the report card for this family of queries. I expect: {grade}"
                ))
            }
            ScriptedBehavior::MarkerJudge { default } => {
                Some(marker_verdict(final_user, *default))
            }
        }
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        validate_messages(messages)?;
        {
            let mut failures = self.failures_remaining.lock().unwrap();
            if *failures > 0 {
                *failures -= 1;
                self.calls.lock().unwrap().push(ScriptedCall {
                    messages: messages.to_vec(),
                    outcome: ScriptedOutcome::InjectedFailure,
                });
                return Err(BackendError::Transport {
                    model: self.model_id.clone(),
                    detail: "injected transient failure".into(),
                });
            }
        }
        let final_user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| BackendError::InvalidRequest {
                detail: "no user message in conversation".into(),
            })?;
        let outcome = self.respond(final_user);
        let mut calls = self.calls.lock().unwrap();
        match outcome {
            Some(text) => {
                calls.push(ScriptedCall {
                    messages: messages.to_vec(),
                    outcome: ScriptedOutcome::Responded(text.clone()),
                });
                Ok(text)
            }
            None => {
                calls.push(ScriptedCall {
                    messages: messages.to_vec(),
                    outcome: ScriptedOutcome::NoRuleMatched,
                });
                Err(BackendError::Transport {
                    model: self.model_id.clone(),
                    detail: "no scripted rule matched the final user message".into(),
                })
            }
        }
    }
}

/// Deterministic grade for a (model, message) pair, used by the quality
/// responder and anything that wants to predict what it will do.
pub fn quality_grade(model_id: &str, final_user: &str) -> Grade {
    let mut bytes = Vec::with_capacity(model_id.len() + 1 + final_user.len());
    bytes.extend_from_slice(model_id.as_bytes());
    bytes.push(0x1F);
    bytes.extend_from_slice(final_user.as_bytes());
    match fnv1a64(&bytes) % 3 {
        0 => Grade::Bad,
        1 => Grade::Ok,
        _ => Grade::Great,
    }
}

fn quality_response(model_id: &str, final_user: &str) -> String {
    let grade = quality_grade(model_id, final_user);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(model_id.as_bytes());
    bytes.push(0x1F);
    bytes.extend_from_slice(final_user.as_bytes());
    // The signature is rendered in decimal so no stray grade token can
    // ever appear in the text: the marker grade must stay the only one.
    let signature = fnv1a64(&bytes);
    format!(
        "Scripted answer from {model_id} keyed to this prompt. \
         {QUALITY_MARKER}{grade} [signature {signature}]"
    )
}

/// Extracts the `[dataset:<label>]` tag synthetic corpora embed in query
/// text so scripted predictors can tell which family a query belongs to.
pub fn query_dataset_tag(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\[dataset:([^\]\s]+)\]").unwrap());
    re.captures(text).map(|c| c[1].to_string())
}

/// Finds the grade a rendered report card records for `dataset`, trying
/// the long entry format first and the short one second.
fn card_entry_grade(text: &str, dataset: &str) -> Option<Grade> {
    static LONG: OnceLock<Regex> = OnceLock::new();
    static SHORT: OnceLock<Regex> = OnceLock::new();
    let long = LONG.get_or_init(|| {
        Regex::new(r"(?m)^- (.+?) \(.*\): most frequent judge verdict: (bad|ok|great),").unwrap()
    });
    let short = SHORT
        .get_or_init(|| Regex::new(r"(?m)^([^:\n]+): (bad|ok|great)$").unwrap());
    for re in [long, short] {
        for caps in re.captures_iter(text) {
            if &caps[1] == dataset {
                return caps[2].parse().ok();
            }
        }
    }
    None
}

/// Builds a structured verdict for every `### Response <label>` block in a
/// judge prompt, grading each by its quality marker.
fn marker_verdict(prompt: &str, default: Grade) -> String {
    static BLOCK: OnceLock<Regex> = OnceLock::new();
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let block = BLOCK.get_or_init(|| {
        Regex::new(r"(?s)### Response (R\d+)\n(.*?)### End (R\d+)").unwrap()
    });
    let marker = MARKER
        .get_or_init(|| Regex::new(&format!("{QUALITY_MARKER}(bad|ok|great)")).unwrap());
    let mut verdict = serde_json::Map::new();
    for caps in block.captures_iter(prompt) {
        if caps[1] != caps[3] {
            continue;
        }
        let grade = marker
            .captures(&caps[2])
            .and_then(|m| m[1].parse::<Grade>().ok())
            .unwrap_or(default);
        verdict.insert(
            caps[1].to_string(),
            serde_json::json!({
                "grade": grade,
                "rationale": "Scripted verdict derived from the response's embedded quality marker.",
            }),
        );
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(verdict)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    async fn ask(backend: &ScriptedBackend, text: &str) -> Result<String, BackendError> {
        backend
            .chat(&[ChatMessage::system("sys"), ChatMessage::user(text)])
            .await
    }

    #[tokio::test]
    async fn fixed_behavior_echoes_its_text_and_logs_calls() {
        let b = ScriptedBackend::new(
            "m",
            ScriptedBehavior::Fixed {
                text: "always this".into(),
            },
        );
        assert_eq!(ask(&b, "one").await.unwrap(), "always this");
        assert_eq!(ask(&b, "two").await.unwrap(), "always this");
        assert_eq!(b.call_count(), 2);
        assert_eq!(
            b.calls()[1].outcome,
            ScriptedOutcome::Responded("always this".into())
        );
    }

    #[tokio::test]
    async fn contains_rules_fire_in_order_with_default_fallback() {
        let b = ScriptedBackend::new(
            "m",
            ScriptedBehavior::ContainsRules {
                rules: vec![
                    ContainsRule {
                        needle: "could not be parsed".into(),
                        response: "ok".into(),
                    },
                    ContainsRule {
                        needle: "predict".into(),
                        response: "gibberish".into(),
                    },
                ],
                default: Some("fallback".into()),
            },
        );
        assert_eq!(ask(&b, "please predict something").await.unwrap(), "gibberish");
        assert_eq!(
            ask(&b, "your output could not be parsed").await.unwrap(),
            "ok"
        );
        assert_eq!(ask(&b, "anything else").await.unwrap(), "fallback");
    }

    #[tokio::test]
    async fn missing_rule_without_default_fails() {
        let b = ScriptedBackend::new(
            "m",
            ScriptedBehavior::ContainsRules {
                rules: vec![],
                default: None,
            },
        );
        assert!(ask(&b, "no rule for this").await.is_err());
        assert_eq!(b.calls()[0].outcome, ScriptedOutcome::NoRuleMatched);
    }

    #[tokio::test]
    async fn injected_failures_are_transient_and_logged() {
        let b = ScriptedBackend::new(
            "m",
            ScriptedBehavior::Fixed {
                text: "late".into(),
            },
        );
        b.inject_failures(2);
        assert!(ask(&b, "a").await.is_err());
        assert!(ask(&b, "b").await.is_err());
        assert_eq!(ask(&b, "c").await.unwrap(), "late");
        let outcomes: Vec<_> = b.calls().into_iter().map(|c| c.outcome).collect();
        assert_eq!(
            outcomes,
            vec![
                ScriptedOutcome::InjectedFailure,
                ScriptedOutcome::InjectedFailure,
                ScriptedOutcome::Responded("late".into()),
            ]
        );
    }

    #[tokio::test]
    async fn quality_responder_is_pure_and_single_grade() {
        let b = ScriptedBackend::new("model-a", ScriptedBehavior::QualityResponder);
        let first = ask(&b, "What is 2+2? [dataset:arith]").await.unwrap();
        let again = ask(&b, "What is 2+2? [dataset:arith]").await.unwrap();
        assert_eq!(first, again);
        let expected = quality_grade("model-a", "What is 2+2? [dataset:arith]");
        assert_eq!(crate::grade::parse_grade(&first).unwrap(), expected);
        // A different model gives an independent (possibly different) text.
        let other = ScriptedBackend::new("model-b", ScriptedBehavior::QualityResponder);
        assert_ne!(ask(&other, "What is 2+2? [dataset:arith]").await.unwrap(), first);
    }

    #[tokio::test]
    async fn card_mode_echo_reads_long_and_short_cards() {
        let b = ScriptedBackend::new(
            "m",
            ScriptedBehavior::CardModeEcho {
                default: Grade::Ok,
            },
        );
        let long_prompt = "Report card for m.\n\n\
            - algebra (symbolic manipulation): most frequent judge verdict: great, backed by 12 graded responses\n\
            - trivia (recall questions): most frequent judge verdict: bad, backed by 9 graded responses\n\n\
            Query:\nSolve x. [dataset:algebra]";
        let out = ask(&b, long_prompt).await.unwrap();
        assert_eq!(crate::grade::parse_grade(&out).unwrap(), Grade::Great);

        let short_prompt = "Report card for m:\n\nalgebra: great\ntrivia: bad\n\nQuery:\nWho? [dataset:trivia]";
        let out = ask(&b, short_prompt).await.unwrap();
        assert_eq!(crate::grade::parse_grade(&out).unwrap(), Grade::Bad);

        // No tag, unknown family -> default.
        let out = ask(&b, "no card here at all").await.unwrap();
        assert_eq!(crate::grade::parse_grade(&out).unwrap(), Grade::Ok);
    }

    #[tokio::test]
    async fn marker_judge_grades_every_block_by_marker() {
        let b = ScriptedBackend::new(
            "judge",
            ScriptedBehavior::MarkerJudge {
                default: Grade::Bad,
            },
        );
        let prompt = "Grade these.\n\n\
            ### Response R1\nAn answer. QUALITY:great [signature 1]\n### End R1\n\n\
            ### Response R2\nNo marker here.\n### End R2\n";
        let out = ask(&b, prompt).await.unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(parsed["R1"]["grade"], "great");
        assert_eq!(parsed["R2"]["grade"], "bad");
        assert!(parsed["R1"]["rationale"].as_str().unwrap().len() > 10);
    }
}

//! The three-level grade vocabulary shared by every stage of the pipeline.
//!
//! Judges emit grades, predictors guess them, report cards summarize them,
//! and the router thresholds on them. Everything funnels through [`Grade`],
//! so the ordering (`bad < ok < great`) and the canonical lowercase tokens
//! are defined exactly once, here.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// An ordinal quality grade. Variant order defines the ordering used for
/// comparisons, routing thresholds, and pessimistic tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Bad,
    Ok,
    Great,
}

impl Grade {
    /// All grades in ascending order.
    pub const ALL: [Grade; 3] = [Grade::Bad, Grade::Ok, Grade::Great];

    /// The canonical lowercase token for this grade.
    pub fn token(self) -> &'static str {
        match self {
            Grade::Bad => "bad",
            Grade::Ok => "ok",
            Grade::Great => "great",
        }
    }

    /// Matches a single word against the grade tokens, ignoring ASCII case.
    /// Only exact token matches count: synonyms ("good", "okay") do not.
    fn from_word(word: &str) -> Option<Grade> {
        Grade::ALL
            .into_iter()
            .find(|g| word.eq_ignore_ascii_case(g.token()))
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Grade {
    type Err = GradeParseError;

    /// Strict parse: the input must be a single grade token, modulo
    /// surrounding whitespace and ASCII case. For fishing a grade out of
    /// free-form model output use [`parse_grade`] instead.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Grade::from_word(s.trim()).ok_or_else(|| GradeParseError::NoGradeFound {
            snippet: snippet(s),
        })
    }
}

/// Why a piece of model output could not be resolved to a grade.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GradeParseError {
    /// The text contains no grade token at all.
    #[error("no grade token found in model output (got {snippet:?})")]
    NoGradeFound { snippet: String },
    /// The text contains two or more distinct grade tokens and the final
    /// line does not single one of them out.
    #[error("ambiguous grade: output mentions {found:?} with no decisive final line")]
    AmbiguousGrade { found: Vec<Grade> },
}

/// Extracts a grade from free-form model output.
///
/// The text is scanned for grade tokens at word boundaries, ignoring case
/// and surrounding punctuation or quotes, so `"Great"`, `  "ok".` and a
/// bare `bad` all parse. Words that merely contain a token ("okay",
/// "tokens") never match. If exactly one distinct grade appears anywhere in
/// the text it wins. If several distinct grades appear, the final non-empty
/// line breaks the tie when it consists of exactly one grade token — the
/// shape produced by "reply with the grade on the final line" prompts —
/// otherwise the parse is [`GradeParseError::AmbiguousGrade`]. Text with no
/// grade token at all is [`GradeParseError::NoGradeFound`].
pub fn parse_grade(text: &str) -> Result<Grade, GradeParseError> {
    let mut found: Vec<Grade> = Vec::new();
    for word in text.split(|c: char| !c.is_alphabetic()) {
        if let Some(grade) = Grade::from_word(word) {
            if !found.contains(&grade) {
                found.push(grade);
            }
        }
    }
    match found.as_slice() {
        [] => Err(GradeParseError::NoGradeFound {
            snippet: snippet(text),
        }),
        [only] => Ok(*only),
        _ => {
            if let Some(line) = text.lines().rev().find(|l| !l.trim().is_empty()) {
                let stripped = line.trim_matches(|c: char| !c.is_alphanumeric());
                if let Some(grade) = Grade::from_word(stripped) {
                    return Ok(grade);
                }
            }
            Err(GradeParseError::AmbiguousGrade { found })
        }
    }
}

/// Counts word-boundary occurrences of one grade's token in `text`,
/// ignoring case. Used to enforce prompts and report cards that must
/// mention a grade token an exact number of times.
pub fn count_grade_tokens(text: &str, grade: Grade) -> usize {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|word| word.eq_ignore_ascii_case(grade.token()))
        .count()
}

/// A short excerpt of the offending text, for error messages.
fn snippet(text: &str) -> String {
    const LIMIT: usize = 80;
    let trimmed = text.trim();
    if trimmed.chars().count() <= LIMIT {
        trimmed.to_string()
    } else {
        let cut: String = trimmed.chars().take(LIMIT).collect();
        format!("{cut}…")
    }
}

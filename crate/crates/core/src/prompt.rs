//! Prompt templates with `{name}` placeholders and strict rendering.
//!
//! Templates live as plain text files next to a manifest that declares
//! which placeholders each one uses; a built-in set is compiled into the
//! binary and a directory of overrides can be loaded at runtime. Rendering
//! is strict in both directions — a placeholder without a binding and a
//! binding without a placeholder are both errors — so drift between
//! templates and call sites is caught immediately instead of producing
//! half-rendered prompts.
//!
//! Bound values are spliced in verbatim in a single pass over the parsed
//! template, so braces inside a value are never re-interpreted as
//! placeholders. Use [`escape`] only when embedding text into a string that
//! will itself be parsed as a template.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

/// Templates that every template set must provide for the pipeline to run.
pub const REQUIRED_TEMPLATES: [&str; 12] = [
    "combined_evaluation",
    "contextual_prediction",
    "evaluator_system",
    "independent_evaluation",
    "json_correction",
    "long_feedback",
    "mischievous_rubric",
    "prediction_correction",
    "responder_system",
    "rubric",
    "short_feedback",
    "zero_shot_prediction",
];

/// Built-in template bodies, compiled into the binary so the pipeline
/// works without any template directory on disk.
const BUILTIN_MANIFEST: &str = include_str!("../templates/manifest.txt");
const BUILTIN_BODIES: [(&str, &str); 12] = [
    (
        "combined_evaluation",
        include_str!("../templates/combined_evaluation.txt"),
    ),
    (
        "contextual_prediction",
        include_str!("../templates/contextual_prediction.txt"),
    ),
    (
        "evaluator_system",
        include_str!("../templates/evaluator_system.txt"),
    ),
    (
        "independent_evaluation",
        include_str!("../templates/independent_evaluation.txt"),
    ),
    (
        "json_correction",
        include_str!("../templates/json_correction.txt"),
    ),
    ("long_feedback", include_str!("../templates/long_feedback.txt")),
    (
        "mischievous_rubric",
        include_str!("../templates/mischievous_rubric.txt"),
    ),
    (
        "prediction_correction",
        include_str!("../templates/prediction_correction.txt"),
    ),
    (
        "responder_system",
        include_str!("../templates/responder_system.txt"),
    ),
    ("rubric", include_str!("../templates/rubric.txt")),
    ("short_feedback", include_str!("../templates/short_feedback.txt")),
    (
        "zero_shot_prediction",
        include_str!("../templates/zero_shot_prediction.txt"),
    ),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template:?}: invalid placeholder syntax: {detail}")]
    InvalidPlaceholderSyntax { template: String, detail: String },
    #[error("template {template:?} uses placeholder {name:?} that has no binding")]
    MissingBinding { template: String, name: String },
    #[error("binding {name:?} does not match any placeholder in template {template:?}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("no template named {0:?}")]
    MissingTemplate(String),
    #[error("template manifest problem: {0}")]
    Manifest(String),
    #[error("failed to read template file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One piece of a parsed template body.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A parsed template: an id plus the segment list its body compiled to.
#[derive(Debug, Clone)]
pub struct Template {
    id: String,
    segments: Vec<Segment>,
    placeholders: BTreeSet<String>,
}

impl Template {
    /// Parses a body into a template. `{name}` marks a placeholder
    /// (letters, digits, underscores, starting with a letter or
    /// underscore); `{{` and `}}` are escapes for literal braces; any other
    /// brace use is a syntax error.
    pub fn parse(id: impl Into<String>, body: &str) -> Result<Self, PromptError> {
        let id = id.into();
        let segments = parse_segments(body).map_err(|detail| {
            PromptError::InvalidPlaceholderSyntax {
                template: id.clone(),
                detail,
            }
        })?;
        let placeholders = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(name) => Some(name.clone()),
                Segment::Literal(_) => None,
            })
            .collect();
        Ok(Template {
            id,
            segments,
            placeholders,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Distinct placeholder names used by this template.
    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Renders the template with the given bindings. Strict: every
    /// placeholder must have a binding and every binding must be used.
    /// Values are spliced verbatim; nothing in a value is re-parsed, so the
    /// output contains no unfilled placeholder of this template.
    pub fn render(&self, bindings: &Bindings) -> Result<String, PromptError> {
        for name in bindings.map.keys() {
            if !self.placeholders.contains(name) {
                return Err(PromptError::UnknownPlaceholder {
                    template: self.id.clone(),
                    name: name.clone(),
                });
            }
        }
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) => match bindings.map.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(PromptError::MissingBinding {
                            template: self.id.clone(),
                            name: name.clone(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

fn parse_segments(body: &str) -> Result<Vec<Segment>, String> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' => {
                if chars.peek() == Some(&'{') {
                    chars.next();
                    literal.push('{');
                    continue;
                }
                let mut name = String::new();
                let mut closed = false;
                for n in chars.by_ref() {
                    if n == '}' {
                        closed = true;
                        break;
                    }
                    name.push(n);
                }
                if !closed {
                    return Err(format!("unclosed placeholder {{{name}"));
                }
                if !is_valid_name(&name) {
                    return Err(format!("invalid placeholder name {name:?}"));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(name));
            }
            '}' => {
                if chars.peek() == Some(&'}') {
                    chars.next();
                    literal.push('}');
                } else {
                    return Err("stray '}' outside a placeholder (escape it as '}}')".into());
                }
            }
            other => literal.push(other),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Escapes text for inclusion in a string that will be parsed as a
/// template body, by doubling every brace.
pub fn escape(text: &str) -> String {
    text.replace('{', "{{").replace('}', "}}")
}

/// Named values to substitute into a template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bindings {
    map: BTreeMap<String, String>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    /// Adds a binding, builder-style.
    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.map.insert(name.into(), value.into());
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.map.insert(name.into(), value.into());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

/// A named collection of templates validated against a manifest.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    /// The compiled-in template set. Guaranteed complete; a unit test
    /// asserts that it parses and covers [`REQUIRED_TEMPLATES`].
    pub fn builtin() -> Result<Self, PromptError> {
        let manifest = parse_manifest(BUILTIN_MANIFEST)?;
        let mut templates = BTreeMap::new();
        for (id, body) in BUILTIN_BODIES {
            templates.insert(id.to_string(), Template::parse(id, body)?);
        }
        let set = TemplateSet { templates };
        set.check_manifest(&manifest)?;
        set.check_required()?;
        Ok(set)
    }

    /// Loads `<dir>/<id>.txt` for every id declared in `<dir>/manifest.txt`
    /// and validates the set: declared placeholders must match the body of
    /// each template exactly, every manifest entry must have a file, every
    /// template file must have a manifest entry, and all of
    /// [`REQUIRED_TEMPLATES`] must be present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.txt");
        let manifest_raw =
            std::fs::read_to_string(&manifest_path).map_err(|source| PromptError::Io {
                path: manifest_path.display().to_string(),
                source,
            })?;
        let manifest = parse_manifest(&manifest_raw)?;
        let mut templates = BTreeMap::new();
        for id in manifest.keys() {
            let path = dir.join(format!("{id}.txt"));
            let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(id.clone(), Template::parse(id.clone(), &body)?);
        }
        for entry in std::fs::read_dir(dir).map_err(|source| PromptError::Io {
            path: dir.display().to_string(),
            source,
        })? {
            let entry = entry.map_err(|source| PromptError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".txt") {
                if stem != "manifest" && !manifest.contains_key(stem) {
                    return Err(PromptError::Manifest(format!(
                        "template file {name:?} is not declared in the manifest"
                    )));
                }
            }
        }
        let set = TemplateSet { templates };
        set.check_manifest(&manifest)?;
        set.check_required()?;
        Ok(set)
    }

    fn check_manifest(&self, manifest: &BTreeMap<String, BTreeSet<String>>) -> Result<(), PromptError> {
        for (id, declared) in manifest {
            let template = self
                .templates
                .get(id)
                .ok_or_else(|| PromptError::MissingTemplate(id.clone()))?;
            if template.placeholders() != declared {
                return Err(PromptError::Manifest(format!(
                    "template {id:?} declares placeholders {declared:?} but its body uses {:?}",
                    template.placeholders()
                )));
            }
        }
        Ok(())
    }

    fn check_required(&self) -> Result<(), PromptError> {
        for id in REQUIRED_TEMPLATES {
            if !self.templates.contains_key(id) {
                return Err(PromptError::MissingTemplate(id.to_string()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Template, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::MissingTemplate(id.to_string()))
    }

    /// Renders the named template; see [`Template::render`].
    pub fn render(&self, id: &str, bindings: &Bindings) -> Result<String, PromptError> {
        self.get(id)?.render(bindings)
    }

    /// All template ids, sorted.
    pub fn ids(&self) -> Vec<&str> {
        self.templates.keys().map(String::as_str).collect()
    }
}

/// Parses manifest lines of the form `id = ph1 ph2`, ignoring blank lines
/// and `#` comments.
fn parse_manifest(raw: &str) -> Result<BTreeMap<String, BTreeSet<String>>, PromptError> {
    let mut manifest = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, names) = line.split_once('=').ok_or_else(|| {
            PromptError::Manifest(format!("line {}: expected `id = placeholders`", idx + 1))
        })?;
        let id = id.trim();
        if !is_valid_name(id) {
            return Err(PromptError::Manifest(format!(
                "line {}: invalid template id {id:?}",
                idx + 1
            )));
        }
        let placeholders: BTreeSet<String> =
            names.split_whitespace().map(str::to_string).collect();
        if manifest.insert(id.to_string(), placeholders).is_some() {
            return Err(PromptError::Manifest(format!(
                "template {id:?} declared twice"
            )));
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_is_complete_and_valid() {
        let set = TemplateSet::builtin().expect("builtin templates must parse");
        let mut expected: Vec<&str> = REQUIRED_TEMPLATES.to_vec();
        expected.sort_unstable();
        assert_eq!(set.ids(), expected);
    }

    #[test]
    fn render_replaces_every_placeholder() {
        let t = Template::parse("t", "Hello {name}, you asked: {query}").unwrap();
        let out = t
            .render(&Bindings::new().with("name", "Ada").with("query", "why?"))
            .unwrap();
        assert_eq!(out, "Hello Ada, you asked: why?");
    }

    #[test]
    fn doubled_braces_render_as_literals() {
        let t = Template::parse("t", "a {{literal}} brace and {ph}").unwrap();
        let out = t.render(&Bindings::new().with("ph", "x")).unwrap();
        assert_eq!(out, "a {literal} brace and x");
    }

    #[test]
    fn missing_binding_is_an_error() {
        let t = Template::parse("t", "{a} {b}").unwrap();
        let err = t.render(&Bindings::new().with("a", "1")).unwrap_err();
        assert!(matches!(err, PromptError::MissingBinding { name, .. } if name == "b"));
    }

    #[test]
    fn unused_binding_is_an_error() {
        let t = Template::parse("t", "{a}").unwrap();
        let err = t
            .render(&Bindings::new().with("a", "1").with("extra", "2"))
            .unwrap_err();
        assert!(matches!(err, PromptError::UnknownPlaceholder { name, .. } if name == "extra"));
    }

    #[test]
    fn stray_braces_are_syntax_errors() {
        assert!(Template::parse("t", "oops }").is_err());
        assert!(Template::parse("t", "oops {unclosed").is_err());
        assert!(Template::parse("t", "bad {1name}").is_err());
        assert!(Template::parse("t", "empty {}").is_err());
    }

    #[test]
    fn values_are_never_reinterpreted_as_placeholders() {
        let t = Template::parse("t", "wrap: {value}").unwrap();
        let out = t
            .render(&Bindings::new().with("value", "code {snippet} with {braces}"))
            .unwrap();
        assert_eq!(out, "wrap: code {snippet} with {braces}");
    }

    #[test]
    fn escape_round_trips_through_a_template_body() {
        let hostile = "a {b} c }{ {{d}}";
        let body = format!("prefix {} suffix", escape(hostile));
        let t = Template::parse("t", &body).unwrap();
        assert!(t.placeholders().is_empty());
        let out = t.render(&Bindings::new()).unwrap();
        assert_eq!(out, format!("prefix {hostile} suffix"));
    }

    #[test]
    fn manifest_must_match_body_placeholders() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "greeting = name\n").unwrap();
        std::fs::write(dir.path().join("greeting.txt"), "Hello {name} and {other}").unwrap();
        let err = TemplateSet::load_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::Manifest(_)), "got {err:?}");
    }

    #[test]
    fn undeclared_template_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "a =\n").unwrap();
        std::fs::write(dir.path().join("a.txt"), "body").unwrap();
        std::fs::write(dir.path().join("rogue.txt"), "body").unwrap();
        let err = TemplateSet::load_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::Manifest(_)), "got {err:?}");
    }

    #[test]
    fn loading_the_shipped_template_dir_matches_builtin() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/templates");
        let set = TemplateSet::load_dir(dir).expect("shipped templates must load");
        let builtin = TemplateSet::builtin().unwrap();
        assert_eq!(set.ids(), builtin.ids());
    }

    #[test]
    fn missing_required_template_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "rubric =\n").unwrap();
        std::fs::write(dir.path().join("rubric.txt"), "grades").unwrap();
        let err = TemplateSet::load_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::MissingTemplate(_)));
    }
}

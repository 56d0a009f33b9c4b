//! Prompt construction and decision parsing.
//!
//! Every step renders one self-contained user prompt with four parts: the task
//! and objective, any auxiliary requirements, the already-selected features and
//! the remaining candidates (both with their metadata). The reply is expected to
//! end with a line of the form
//!
//! ```text
//! Selected Feature: <name>, Reason: <reason>
//! ```
//!
//! The shipped template is a reconstruction that honours those four parts; it can
//! be replaced with a template file using the placeholders `{objective}`,
//! `{requirements}`, `{selected}`, `{candidates}` and `{format_instruction}`.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{FeatureCatalog, FeatureRecord};
use crate::selection::{Requirement, SelectionConfig, SelectionState};

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/default_prompt.txt");

pub const SELECTED_MARKER: &str = "Selected Feature:";
pub const REASON_MARKER: &str = "Reason:";
pub const NONE_SELECTED: &str = "(none selected yet)";
pub const ELLIPSIS: &str = "…";

const FORMAT_LINE: &str = "Selected Feature: <candidate feature name>, Reason: <one-sentence reason>";

const PLACEHOLDERS: [&str; 5] = [
    "objective",
    "requirements",
    "selected",
    "candidates",
    "format_instruction",
];

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PromptError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("prompt template is missing the {{{0}}} placeholder")]
    MissingPlaceholder(&'static str),
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no `Selected Feature: ..., Reason: ...` line found")]
    NoDecisionFound,
    #[error("selected feature {0:?} is not among the candidates")]
    UnknownFeatureName(String),
    #[error("selected feature {0:?} matches more than one candidate")]
    AmbiguousMatch(String),
}

/// A validated prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    /// `{candidates}` and `{format_instruction}` are mandatory; the others may be
    /// dropped by a custom template.
    pub fn parse(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for required in ["candidates", "format_instruction"] {
            if !text.contains(&format!("{{{required}}}")) {
                return Err(PromptError::MissingPlaceholder(required));
            }
        }
        Ok(Self { text })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Single-pass substitution, so placeholder-like text inside feature
    /// descriptions is never expanded.
    fn render(&self, values: &[(&str, &str); 5]) -> String {
        let mut out = String::with_capacity(self.text.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open + 1..];
            let hit = tail.find('}').and_then(|close| {
                let key = &tail[..close];
                values
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| (close, *v))
            });
            match hit {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &tail[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = tail;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// The rendered prompt for one step, with its parts kept for inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub objective_text: String,
    pub requirements_block: String,
    pub selected_block: String,
    pub candidate_block: String,
    pub rendered: String,
    /// Rough size in tokens (characters / 4). Used for warnings only.
    pub token_estimate: usize,
}

impl PromptContext {
    /// Copy of this prompt with a corrective instruction appended after an
    /// unusable reply.
    pub fn with_correction(&self, problem: &str) -> PromptContext {
        let mut next = self.clone();
        let _ = write!(
            next.rendered,
            "\n\nYour previous reply could not be used ({problem}). Reply again and end with exactly one line of the form:\n{FORMAT_LINE}\nThe feature name must be copied exactly from the candidate list above."
        );
        next.token_estimate = estimate_tokens(&next.rendered);
        next
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Cut a description to `max_chars` characters, marking the cut with an ellipsis.
/// Line breaks are flattened so each feature renders on a single line.
pub fn truncate_description(text: &str, max_chars: usize) -> String {
    let flat: String = text
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    if flat.chars().count() <= max_chars {
        flat
    } else {
        let mut cut: String = flat.chars().take(max_chars).collect();
        cut.push_str(ELLIPSIS);
        cut
    }
}

/// One line per feature: `- name: description [group=..; category=..; key=value; ...]`.
pub fn render_feature_line(record: &FeatureRecord, max_desc_chars: usize) -> String {
    let mut line = format!(
        "- {}: {}",
        record.name,
        truncate_description(&record.description, max_desc_chars)
    );
    let mut annotations = Vec::new();
    if let Some(group) = record.group_id() {
        annotations.push(format!("group={group}"));
    }
    if let Some(category) = record.category {
        annotations.push(format!("category={}", category.as_str()));
    }
    for (key, value) in &record.metadata {
        annotations.push(format!("{key}={value}"));
    }
    if !annotations.is_empty() {
        let _ = write!(line, " [{}]", annotations.join("; "));
    }
    line
}

fn render_block(
    names: &[String],
    catalog: &FeatureCatalog,
    max_desc_chars: usize,
) -> Result<String, PromptError> {
    let mut lines = Vec::with_capacity(names.len());
    for name in names {
        let record = catalog
            .get(name)
            .ok_or_else(|| PromptError::UnknownFeature(name.clone()))?;
        lines.push(render_feature_line(record, max_desc_chars));
    }
    Ok(lines.join("\n"))
}

pub fn render_requirements(requirements: &[Requirement]) -> String {
    if requirements.is_empty() {
        return String::new();
    }
    let mut block = String::from("Auxiliary requirements:\n");
    for requirement in requirements {
        let _ = writeln!(block, "- {}", requirement.text);
    }
    block.push('\n');
    block
}

pub fn format_instruction() -> String {
    format!(
        "First reason briefly about which candidate best serves the objective given the features already selected and the requirements. Then end your reply with exactly one line in this format:\n{FORMAT_LINE}"
    )
}

pub fn build_prompt(
    state: &SelectionState,
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
) -> Result<PromptContext, PromptError> {
    let selected_block = if state.selected.is_empty() {
        NONE_SELECTED.to_string()
    } else {
        render_block(&state.selected, catalog, config.max_desc_chars)?
    };
    let candidate_block = render_block(&state.available, catalog, config.max_desc_chars)?;
    let requirements_block = render_requirements(&config.requirements);
    let instruction = format_instruction();
    let rendered = config.template.render(&[
        (PLACEHOLDERS[0], config.objective.as_str()),
        (PLACEHOLDERS[1], requirements_block.as_str()),
        (PLACEHOLDERS[2], selected_block.as_str()),
        (PLACEHOLDERS[3], candidate_block.as_str()),
        (PLACEHOLDERS[4], instruction.as_str()),
    ]);
    Ok(PromptContext {
        objective_text: config.objective.clone(),
        requirements_block,
        selected_block,
        candidate_block,
        token_estimate: estimate_tokens(&rendered),
        rendered,
    })
}

/// The decision extracted from a reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDecision {
    pub feature_name: String,
    pub reason: String,
}

/// ASCII case-insensitive substring search; byte offset of the first match.
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let (h, n) = (haystack.as_bytes(), needle.as_bytes());
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

const DECORATION: &[char] = &['*', '`', '"', '\''];

fn strip_decoration(s: &str) -> &str {
    s.trim().trim_matches(|c: char| c.is_whitespace() || DECORATION.contains(&c))
}

fn clean_name(raw: &str) -> String {
    let s = strip_decoration(raw);
    let s = s.trim_end_matches([',', ';']);
    strip_decoration(s).to_string()
}

fn clean_reason(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| c == '*' || c.is_whitespace())
        .to_string()
}

/// Reason on a following line: `Reason: ...`, possibly behind list/markdown noise.
fn reason_line(line: &str) -> Option<String> {
    let head = line.trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '-' || c == '>');
    if head.len() >= REASON_MARKER.len() && head[..REASON_MARKER.len()].eq_ignore_ascii_case(REASON_MARKER) {
        Some(clean_reason(&head[REASON_MARKER.len()..]))
    } else {
        None
    }
}

/// Find the last `Selected Feature: <name>` line that carries a reason (on the
/// same line after the name, or on the next non-blank line) and resolve the name
/// against `candidates`.
///
/// Name resolution: exact match, else a unique case-insensitive match after
/// trimming. More than one such match is ambiguous.
pub fn parse_decision<S: AsRef<str>>(raw: &str, candidates: &[S]) -> Result<ParsedDecision, ParseError> {
    let lines: Vec<&str> = raw.lines().collect();
    for i in (0..lines.len()).rev() {
        let line = lines[i];
        let Some(pos) = find_ci(line, SELECTED_MARKER) else {
            continue;
        };
        let after = &line[pos + SELECTED_MARKER.len()..];
        let (name_part, reason) = match find_ci(after, REASON_MARKER) {
            Some(rp) => (&after[..rp], clean_reason(&after[rp + REASON_MARKER.len()..])),
            None => {
                let next = lines[i + 1..].iter().find(|l| !l.trim().is_empty());
                match next.and_then(|l| reason_line(l)) {
                    Some(reason) => (after, reason),
                    None => continue,
                }
            }
        };
        let name = clean_name(name_part);
        if name.is_empty() || reason.is_empty() {
            continue;
        }
        let feature_name = resolve_name(&name, candidates)?;
        return Ok(ParsedDecision { feature_name, reason });
    }
    Err(ParseError::NoDecisionFound)
}

fn resolve_name<S: AsRef<str>>(name: &str, candidates: &[S]) -> Result<String, ParseError> {
    if let Some(exact) = candidates.iter().find(|c| c.as_ref() == name) {
        return Ok(exact.as_ref().to_string());
    }
    let wanted = name.trim().trim_end_matches('.').to_lowercase();
    let mut hits: Vec<&str> = candidates
        .iter()
        .map(AsRef::as_ref)
        .filter(|c| c.trim().to_lowercase() == wanted)
        .collect();
    let unique: HashSet<&str> = hits.iter().copied().collect();
    match unique.len() {
        0 => Err(ParseError::UnknownFeatureName(name.to_string())),
        1 => Ok(hits.remove(0).to_string()),
        _ => Err(ParseError::AmbiguousMatch(name.to_string())),
    }
}

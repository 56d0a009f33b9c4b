//! The sequential greedy loop.
//!
//! A phase starts from a candidate set `A_0` and an empty selection `S_0`. Each
//! step asks a [`SelectorBackend`] for one feature out of `A_t`, then moves it:
//! `S_{t+1} = S_t ∪ {f}`, `A_{t+1} = A_t \ {f}`. There is no removal or
//! backtracking.

use std::collections::HashSet;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::FeatureCatalog;
use crate::llm_client::{BackendConfig, BackendError};
use crate::prompting::{build_prompt, parse_decision, ParseError, PromptContext, PromptError, PromptTemplate};

/// Re-prompts allowed after an unusable reply before giving up.
pub const MAX_PARSE_RETRIES: u32 = 3;

pub const FORCED_REASON: &str = "forced: the remaining pool equals the phase target";

pub const DEFAULT_OBJECTIVE: &str =
    "Select the features that maximize the predictive accuracy (AUC) of a binary classifier.";

pub const GROUP_CONSOLIDATION_TEXT: &str = "Concentrate the selected features into as few feature groups as possible. Prefer candidates whose group already appears among the selected features whenever that does not materially hurt the objective; every additional group adds a dependency on another team and data pipeline.";

#[derive(Error, Debug)]
pub enum SelectionError {
    #[error("no candidates left to choose from")]
    EmptyCandidates,
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("unparseable backend response after {attempts} attempts: {last_error}")]
    UnparseableResponse {
        attempts: u32,
        last_error: ParseError,
        last_response: String,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("phase target {target} exceeds candidate pool of {pool}")]
    TargetExceedsPool { target: usize, pool: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate candidate {0:?}")]
    DuplicateCandidate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementKind {
    GroupConsolidation,
    CapacityNote,
    FreeText,
}

/// An auxiliary constraint on the selected set, rendered into the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub kind: RequirementKind,
    pub text: String,
}

impl Requirement {
    pub fn new(kind: RequirementKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }

    pub fn group_consolidation() -> Self {
        Self::new(RequirementKind::GroupConsolidation, GROUP_CONSOLIDATION_TEXT)
    }
}

/// Everything a selection run needs besides the catalog and the backend.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Final number of features `K`.
    pub target_k: usize,
    /// Number of disjoint buckets `B` for the first phase.
    pub buckets: usize,
    /// Multiplier on the fair share `K / B` giving the per-bucket target.
    pub oversample_factor: f64,
    pub objective: String,
    pub requirements: Vec<Requirement>,
    pub backend: BackendConfig,
    pub seed: u64,
    pub max_desc_chars: usize,
    /// Concurrent bucket workers in the first phase.
    pub workers: usize,
    pub template: PromptTemplate,
    /// Log a warning when a prompt is estimated above this many tokens.
    pub token_warning: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            target_k: 10,
            buckets: 1,
            oversample_factor: 1.5,
            objective: DEFAULT_OBJECTIVE.to_string(),
            requirements: Vec::new(),
            backend: BackendConfig::default(),
            seed: 0,
            max_desc_chars: 240,
            workers: 1,
            template: PromptTemplate::default(),
            token_warning: 100_000,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.target_k == 0 {
            return Err(SelectionError::Config("target k must be positive".into()));
        }
        if self.buckets == 0 {
            return Err(SelectionError::Config("buckets must be at least 1".into()));
        }
        if !(self.oversample_factor.is_finite() && self.oversample_factor >= 1.0) {
            return Err(SelectionError::Config(format!(
                "oversample factor must be >= 1, got {}",
                self.oversample_factor
            )));
        }
        if self.max_desc_chars == 0 {
            return Err(SelectionError::Config("max description length must be positive".into()));
        }
        if self.workers == 0 {
            return Err(SelectionError::Config("workers must be at least 1".into()));
        }
        if let Some(r) = self.requirements.iter().find(|r| r.text.trim().is_empty()) {
            return Err(SelectionError::Config(format!("empty requirement text ({:?})", r.kind)));
        }
        self.backend.validate().map_err(SelectionError::Config)
    }

    pub fn consolidate_groups(&self) -> bool {
        self.requirements
            .iter()
            .any(|r| r.kind == RequirementKind::GroupConsolidation)
    }
}

/// One step of a phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based step index `t`.
    pub step: usize,
    pub chosen: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_response: String,
    /// Backend calls beyond the first for this step.
    pub retries: u32,
}

/// `(S_t, A_t)` plus the trace of choices so far.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionState {
    pub selected: Vec<String>,
    pub available: Vec<String>,
    pub trace: Vec<StepRecord>,
}

impl SelectionState {
    pub fn new(candidates: Vec<String>) -> Self {
        Self {
            selected: Vec::new(),
            available: candidates,
            trace: Vec::new(),
        }
    }

    fn advance(&self, chosen: &str, reason: String, raw_response: String, retries: u32) -> Self {
        let mut next = self.clone();
        next.available.retain(|n| n != chosen);
        next.selected.push(chosen.to_string());
        next.trace.push(StepRecord {
            step: self.selected.len(),
            chosen: chosen.to_string(),
            reason,
            raw_response,
            retries,
        });
        next
    }
}

/// What a backend sees when asked for a decision.
pub struct DecisionRequest<'a> {
    pub prompt: &'a PromptContext,
    pub state: &'a SelectionState,
    pub catalog: &'a FeatureCatalog,
    pub config: &'a SelectionConfig,
    /// 0 for the first call of a step, then 1, 2, ... on re-prompts.
    pub attempt: u32,
}

/// The decision function: returns the raw reply text for a prompt.
///
/// Implementations must be callable from several bucket workers at once.
pub trait SelectorBackend: Send + Sync {
    fn complete(&self, request: &DecisionRequest<'_>) -> Result<String, BackendError>;

    /// True when the reply is a pure function of the request and seed.
    fn is_deterministic(&self) -> bool {
        false
    }

    /// True when replies depend on the order of calls rather than on the
    /// request, which forces phase-1 buckets to run one at a time.
    fn order_sensitive(&self) -> bool {
        false
    }
}

/// Move exactly one feature from `available` to `selected`.
///
/// A single remaining candidate is a forced move and skips the backend. Unusable
/// replies (no decision line, unknown or ambiguous names) are re-prompted up to
/// [`MAX_PARSE_RETRIES`] times with a corrective instruction.
pub fn select_step(
    state: &SelectionState,
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
    backend: &dyn SelectorBackend,
) -> Result<SelectionState, SelectionError> {
    match state.available.len() {
        0 => return Err(SelectionError::EmptyCandidates),
        1 => {
            let only = state.available[0].clone();
            if !catalog.contains(&only) {
                return Err(SelectionError::UnknownFeature(only));
            }
            return Ok(state.advance(&only, FORCED_REASON.to_string(), String::new(), 0));
        }
        _ => {}
    }

    let base = build_prompt(state, catalog, config)?;
    if base.token_estimate > config.token_warning {
        warn!(
            "prompt at step {} is ~{} tokens (warning threshold {})",
            state.selected.len(),
            base.token_estimate,
            config.token_warning
        );
    }

    let mut prompt = base.clone();
    let mut last_error = ParseError::NoDecisionFound;
    let mut last_response = String::new();
    for attempt in 0..=MAX_PARSE_RETRIES {
        if attempt > 0 {
            prompt = base.with_correction(&last_error.to_string());
        }
        let request = DecisionRequest {
            prompt: &prompt,
            state,
            catalog,
            config,
            attempt,
        };
        let raw = backend.complete(&request)?;
        match parse_decision(&raw, &state.available) {
            Ok(decision) => {
                return Ok(state.advance(&decision.feature_name, decision.reason, raw, attempt));
            }
            Err(err) => {
                last_error = err;
                last_response = raw;
            }
        }
    }
    Err(SelectionError::UnparseableResponse {
        attempts: MAX_PARSE_RETRIES + 1,
        last_error,
        last_response,
    })
}

/// Run sequential selection over `candidates` until `phase_target` are chosen.
///
/// When the target equals the pool size every move is forced and the backend is
/// never called.
pub fn run_phase(
    candidates: &[String],
    phase_target: usize,
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
    backend: &dyn SelectorBackend,
) -> Result<SelectionState, SelectionError> {
    run_phase_until(candidates, phase_target, catalog, config, backend, &|| false)
}

/// [`run_phase`] that checks `cancelled` before every backend step.
pub(crate) fn run_phase_until(
    candidates: &[String],
    phase_target: usize,
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
    backend: &dyn SelectorBackend,
    cancelled: &dyn Fn() -> bool,
) -> Result<SelectionState, SelectionError> {
    let mut seen = HashSet::with_capacity(candidates.len());
    for name in candidates {
        if !catalog.contains(name) {
            return Err(SelectionError::UnknownFeature(name.clone()));
        }
        if !seen.insert(name.as_str()) {
            return Err(SelectionError::DuplicateCandidate(name.clone()));
        }
    }
    if phase_target > candidates.len() {
        return Err(SelectionError::TargetExceedsPool {
            target: phase_target,
            pool: candidates.len(),
        });
    }

    let mut state = SelectionState::new(candidates.to_vec());
    if phase_target == candidates.len() {
        for name in candidates {
            state = state.advance(name, FORCED_REASON.to_string(), String::new(), 0);
        }
        return Ok(state);
    }
    for _ in 0..phase_target {
        if cancelled() {
            return Err(SelectionError::Cancelled);
        }
        state = select_step(&state, catalog, config, backend)?;
    }
    Ok(state)
}

/// JSONL trace, one step per line. Raw responses are kept only when `verbose`.
pub fn write_trace_jsonl<W: Write>(
    out: &mut W,
    trace: &[StepRecord],
    verbose: bool,
) -> std::io::Result<()> {
    for record in trace {
        let line = if verbose {
            serde_json::to_string(record)
        } else {
            serde_json::to_string(&StepRecord {
                raw_response: String::new(),
                ..record.clone()
            })
        }
        .map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

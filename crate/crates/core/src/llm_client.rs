//! Selector backends.
//!
//! * [`RemoteBackend`]: a chat-completions HTTP endpoint (OpenAI-style body, bearer
//!   auth, reply at `choices[0].message.content`). Transient failures (429, 5xx,
//!   timeouts, connection errors) are retried with exponential backoff and jitter.
//! * [`MockImportanceBackend`]: answers with the highest-importance candidate; with
//!   a group-consolidation requirement it prefers groups already selected.
//! * [`ScriptedBackend`]: replays canned replies in order, for fault injection.
//!
//! Replies from the remote backend are not reproducible even at temperature 0;
//! determinism guarantees only hold for the mocks.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::catalog::FeatureCatalog;
use crate::selection::{DecisionRequest, SelectorBackend};

pub const DEFAULT_API_KEY_ENV: &str = "MOFA_API_KEY";

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("scripted responses exhausted after {0} replies")]
    ScriptExhausted(usize),
    #[error("request budget of {0} backend calls exhausted")]
    BudgetExhausted(u64),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    MockImportance,
    MockScripted,
}

impl BackendKind {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, BackendKind::Remote)
    }
}

/// Backend settings. Only the fields relevant to `kind` are consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub temperature: f64,
    /// Transport retries after the first request.
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// Base delay of the exponential backoff; doubles each retry.
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub importance_key: String,
    pub script_path: Option<PathBuf>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    /// Abort after this many backend calls in one run (`None` = unlimited).
    pub request_budget: Option<u64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::MockImportance,
            endpoint_url: None,
            model_name: None,
            temperature: 0.0,
            max_retries: 3,
            timeout_secs: 120.0,
            backoff_base_ms: 1000,
            max_in_flight: 4,
            importance_key: "importance".to_string(),
            script_path: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            request_budget: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err("timeout must be positive".into());
        }
        if self.max_in_flight == 0 {
            return Err("max in-flight requests must be at least 1".into());
        }
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint_url.as_deref().unwrap_or("").is_empty() {
                    return Err("remote backend requires an endpoint url".into());
                }
                if self.model_name.as_deref().unwrap_or("").is_empty() {
                    return Err("remote backend requires a model name".into());
                }
            }
            BackendKind::MockScripted => {
                if self.script_path.is_none() {
                    return Err("scripted backend requires a script path".into());
                }
            }
            BackendKind::MockImportance => {
                if self.importance_key.is_empty() {
                    return Err("importance key must be non-empty".into());
                }
            }
        }
        Ok(())
    }
}

/// Build the backend described by `config`, wrapped in a request budget when one
/// is set. A remote backend without its credential fails here, before any step.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn SelectorBackend>, BackendError> {
    config.validate().map_err(BackendError::Config)?;
    let inner: Box<dyn SelectorBackend> = match config.kind {
        BackendKind::Remote => {
            let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
            let key = key.ok_or_else(|| {
                BackendError::Auth(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?;
            Box::new(RemoteBackend::new(config.clone(), key)?)
        }
        BackendKind::MockImportance => Box::new(MockImportanceBackend::new(&config.importance_key)),
        BackendKind::MockScripted => {
            let path = config.script_path.as_deref().expect("validated");
            Box::new(ScriptedBackend::from_file(path)?)
        }
    };
    Ok(match config.request_budget {
        Some(limit) => Box::new(BudgetedBackend::new(inner, limit)),
        None => inner,
    })
}

/// Deterministic stand-in for the LLM: picks by importance metadata.
///
/// Without a group-consolidation requirement: highest importance, ties to the
/// lexicographically smallest name. With it: candidates whose group already
/// appears in the selection come first; if none does, the candidate whose group
/// holds the most remaining importance is preferred (ungrouped features are their
/// own group). Missing importance ranks below every present value and counts as
/// zero mass.
#[derive(Debug, Clone)]
pub struct MockImportanceBackend {
    importance_key: String,
}

impl MockImportanceBackend {
    pub fn new(importance_key: impl Into<String>) -> Self {
        Self {
            importance_key: importance_key.into(),
        }
    }

    /// The chosen name and the reason sentence.
    pub fn choose(
        &self,
        available: &[String],
        selected: &[String],
        catalog: &FeatureCatalog,
        consolidate: bool,
    ) -> Option<(String, &'static str)> {
        let importance = |name: &str| {
            catalog
                .get(name)
                .and_then(|r| r.number(&self.importance_key))
                .unwrap_or(f64::NEG_INFINITY)
        };
        let group_of = |name: &str| catalog.get(name).and_then(|r| r.group_id()).map(str::to_owned);
        // (importance desc, name asc)
        let best_by_importance = |pool: &[&String]| {
            pool.iter()
                .copied()
                .max_by(|a, b| {
                    importance(a)
                        .total_cmp(&importance(b))
                        .then_with(|| b.cmp(a))
                })
                .cloned()
        };

        if !consolidate {
            let all: Vec<&String> = available.iter().collect();
            return best_by_importance(&all).map(|n| (n, "highest importance among candidates"));
        }

        let used: HashSet<String> = selected.iter().filter_map(|n| group_of(n)).collect();
        let in_used: Vec<&String> = available
            .iter()
            .filter(|n| group_of(n).is_some_and(|g| used.contains(&g)))
            .collect();
        if !in_used.is_empty() {
            return best_by_importance(&in_used)
                .map(|n| (n, "highest importance among candidates in already-selected groups"));
        }

        let mut mass: BTreeMap<String, f64> = BTreeMap::new();
        for name in available {
            if let Some(g) = group_of(name) {
                let v = importance(name);
                *mass.entry(g).or_default() += if v.is_finite() { v } else { 0.0 };
            }
        }
        let group_mass = |name: &str| match group_of(name) {
            Some(g) => mass[&g],
            None => {
                let v = importance(name);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            }
        };
        available
            .iter()
            .max_by(|a, b| {
                group_mass(a)
                    .total_cmp(&group_mass(b))
                    .then_with(|| importance(a).total_cmp(&importance(b)))
                    .then_with(|| b.cmp(a))
            })
            .map(|n| (n.clone(), "opens the group with the most remaining importance"))
    }
}

impl SelectorBackend for MockImportanceBackend {
    fn complete(&self, request: &DecisionRequest<'_>) -> Result<String, BackendError> {
        let (name, reason) = self
            .choose(
                &request.state.available,
                &request.state.selected,
                request.catalog,
                request.config.consolidate_groups(),
            )
            .ok_or_else(|| BackendError::Config("no candidates offered to mock backend".into()))?;
        Ok(format!("Selected Feature: {name}, Reason: {reason}"))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Replays canned replies in order; shared cursor across threads.
#[derive(Debug)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn from_responses(responses: Vec<String>) -> Self {
        Self {
            responses,
            cursor: Mutex::new(0),
        }
    }

    /// One reply per line. `\n` and `\\` escapes inside a line are expanded so a
    /// single line can carry a multi-line reply.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read script {}: {e}", path.display())))?;
        Ok(Self::from_responses(text.lines().map(unescape_line).collect()))
    }

    /// Replies consumed so far.
    pub fn calls(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }
}

fn unescape_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl SelectorBackend for ScriptedBackend {
    fn complete(&self, _request: &DecisionRequest<'_>) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let reply = self
            .responses
            .get(*cursor)
            .cloned()
            .ok_or(BackendError::ScriptExhausted(self.responses.len()))?;
        *cursor += 1;
        Ok(reply)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn order_sensitive(&self) -> bool {
        true
    }
}

/// Caps the number of backend calls for a run.
pub struct BudgetedBackend {
    inner: Box<dyn SelectorBackend>,
    limit: u64,
    used: AtomicU64,
}

impl BudgetedBackend {
    pub fn new(inner: Box<dyn SelectorBackend>, limit: u64) -> Self {
        Self {
            inner,
            limit,
            used: AtomicU64::new(0),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }
}

impl SelectorBackend for BudgetedBackend {
    fn complete(&self, request: &DecisionRequest<'_>) -> Result<String, BackendError> {
        let prior = self.used.fetch_add(1, Ordering::SeqCst);
        if prior >= self.limit {
            return Err(BackendError::BudgetExhausted(self.limit));
        }
        self.inner.complete(request)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn order_sensitive(&self) -> bool {
        self.inner.order_sensitive()
    }
}

/// Counting semaphore bounding concurrent HTTP requests.
struct InFlight {
    free: Mutex<usize>,
    ready: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            ready: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.ready.wait(free).expect("semaphore wait");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.ready.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fail(BackendError),
}

/// Chat-completions client. The API key is held privately and never formatted.
pub struct RemoteBackend {
    config: BackendConfig,
    api_key: String,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint_url", &self.config.endpoint_url)
            .field("model_name", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(config: BackendConfig, api_key: String) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::Config)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(Self {
            config,
            api_key,
            agent,
            in_flight,
        })
    }

    pub fn request_body(&self, content: &str) -> serde_json::Value {
        json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
        })
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter = rand::rng().random_range(0.0..0.25);
        Duration::from_secs_f64(base * (1.0 + jitter) / 1000.0)
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let _permit = self.in_flight.acquire();
        let url = self.config.endpoint_url.as_deref().expect("validated");
        let result = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => {
                return Attempt::Retry(BackendError::Transport(format!("timeout ({t})")))
            }
            Err(ureq::Error::Io(e)) => return Attempt::Retry(BackendError::Transport(e.to_string())),
            Err(ureq::Error::ConnectionFailed) => {
                return Attempt::Retry(BackendError::Transport("connection failed".into()))
            }
            Err(e) => return Attempt::Fail(BackendError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(BackendError::Auth(format!("HTTP {status}"))),
            429 => return Attempt::Retry(BackendError::RateLimited { attempts: 0 }),
            500..=599 => return Attempt::Retry(BackendError::Transport(format!("HTTP {status}"))),
            _ => return Attempt::Fail(BackendError::Transport(format!("HTTP {status}"))),
        }
        let value: serde_json::Value = match response.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Attempt::Fail(BackendError::Transport(format!("bad response body: {e}"))),
        };
        match extract_content(&value) {
            Some(text) => Attempt::Done(text),
            None => Attempt::Fail(BackendError::Transport(
                "response has no choices[0].message.content".into(),
            )),
        }
    }
}

/// `choices[0].message.content` of a chat-completions response.
pub fn extract_content(value: &serde_json::Value) -> Option<String> {
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_owned)
}

impl SelectorBackend for RemoteBackend {
    fn complete(&self, request: &DecisionRequest<'_>) -> Result<String, BackendError> {
        let body = self.request_body(&request.prompt.rendered);
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) => {
                    if retry >= self.config.max_retries {
                        return Err(match err {
                            BackendError::RateLimited { .. } => BackendError::RateLimited { attempts: retry + 1 },
                            other => other,
                        });
                    }
                    let delay = self.backoff(retry);
                    warn!("backend request failed ({err}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    retry += 1;
                }
            }
        }
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        debug!("closing remote backend for {:?}", self.config.endpoint_url);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::FeatureRecord;
    use crate::prompting::build_prompt;
    use crate::selection::{Requirement, SelectionConfig, SelectionState};

    fn cat(records: &[(&str, f64, Option<&str>)]) -> FeatureCatalog {
        FeatureCatalog::new(
            records
                .iter()
                .map(|(n, v, g)| {
                    let r = FeatureRecord::new(*n, "d").with_number("importance", *v);
                    match g {
                        Some(g) => r.with_group(*g),
                        None => r,
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn reply(backend: &dyn SelectorBackend, catalog: &FeatureCatalog, state: &SelectionState, config: &SelectionConfig) -> String {
        let prompt = build_prompt(state, catalog, config).unwrap();
        backend
            .complete(&DecisionRequest {
                prompt: &prompt,
                state,
                catalog,
                config,
                attempt: 0,
            })
            .unwrap()
    }

    #[test]
    fn mock_importance_reply_format() {
        let c = cat(&[("a", 0.9, None), ("b", 0.5, None)]);
        let state = SelectionState::new(c.names());
        let out = reply(&MockImportanceBackend::new("importance"), &c, &state, &SelectionConfig::default());
        assert_eq!(out, "Selected Feature: a, Reason: highest importance among candidates");
    }

    #[test]
    fn mock_ties_go_to_smallest_name() {
        let c = cat(&[("z", 0.5, None), ("m", 0.5, None), ("q", 0.1, None)]);
        let b = MockImportanceBackend::new("importance");
        assert_eq!(b.choose(&c.names(), &[], &c, false).unwrap().0, "m");
    }

    #[test]
    fn mock_missing_importance_ranks_last() {
        let c = FeatureCatalog::new(vec![
            FeatureRecord::new("a", "d"),
            FeatureRecord::new("b", "d").with_number("importance", -3.0),
        ])
        .unwrap();
        let b = MockImportanceBackend::new("importance");
        assert_eq!(b.choose(&c.names(), &[], &c, false).unwrap().0, "b");
    }

    #[test]
    fn mock_consolidation_prefers_selected_groups() {
        let c = cat(&[("a", 0.9, Some("g1")), ("b", 0.8, Some("g2")), ("c", 0.1, Some("g1")), ("d", 0.95, Some("g3"))]);
        let b = MockImportanceBackend::new("importance");
        let available = vec!["b".to_string(), "c".to_string(), "d".to_string()];
        let selected = vec!["a".to_string()];
        assert_eq!(b.choose(&available, &selected, &c, true).unwrap().0, "c");
        assert_eq!(b.choose(&available, &selected, &c, false).unwrap().0, "d");
        let config = SelectionConfig {
            requirements: vec![Requirement::group_consolidation()],
            ..SelectionConfig::default()
        };
        let state = SelectionState {
            selected,
            available,
            trace: vec![],
        };
        let first = reply(&b, &c, &state, &config);
        assert_eq!(first, reply(&b, &c, &state, &config));
        assert!(first.starts_with("Selected Feature: c, Reason:"));
    }

    #[test]
    fn mock_consolidation_opens_heaviest_group() {
        // g2 holds more total importance than the single best feature's group
        let c = cat(&[("a", 0.9, Some("g1")), ("b", 0.5, Some("g2")), ("c", 0.5, Some("g2"))]);
        let b = MockImportanceBackend::new("importance");
        assert_eq!(b.choose(&c.names(), &[], &c, true).unwrap().0, "b");
    }

    #[test]
    fn scripted_reads_escaped_lines_and_exhausts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.txt");
        std::fs::write(&path, "thinking...\\nSelected Feature: a, Reason: r\nsecond\n").unwrap();
        let b = ScriptedBackend::from_file(&path).unwrap();
        let c = cat(&[("a", 0.1, None), ("b", 0.2, None)]);
        let state = SelectionState::new(c.names());
        let config = SelectionConfig::default();
        assert_eq!(reply(&b, &c, &state, &config), "thinking...\nSelected Feature: a, Reason: r");
        assert_eq!(reply(&b, &c, &state, &config), "second");
        let prompt = build_prompt(&state, &c, &config).unwrap();
        let err = b
            .complete(&DecisionRequest { prompt: &prompt, state: &state, catalog: &c, config: &config, attempt: 0 })
            .unwrap_err();
        assert_eq!(err, BackendError::ScriptExhausted(2));
    }

    #[test]
    fn budget_aborts() {
        let c = cat(&[("a", 0.1, None), ("b", 0.2, None)]);
        let b = BudgetedBackend::new(Box::new(MockImportanceBackend::new("importance")), 2);
        let state = SelectionState::new(c.names());
        let config = SelectionConfig::default();
        let prompt = build_prompt(&state, &c, &config).unwrap();
        let req = DecisionRequest { prompt: &prompt, state: &state, catalog: &c, config: &config, attempt: 0 };
        assert!(b.complete(&req).is_ok());
        assert!(b.complete(&req).is_ok());
        assert_eq!(b.complete(&req).unwrap_err(), BackendError::BudgetExhausted(2));
        assert!(b.is_deterministic());
    }

    #[test]
    fn remote_requires_credential_and_fields() {
        let mut config = BackendConfig {
            kind: BackendKind::Remote,
            ..BackendConfig::default()
        };
        assert!(matches!(build_backend(&config), Err(BackendError::Config(_))));
        config.endpoint_url = Some("http://127.0.0.1:9/v1/chat/completions".into());
        config.model_name = Some("m".into());
        config.api_key_env = "FEATSEL_TEST_UNSET_VARIABLE".into();
        assert!(matches!(build_backend(&config), Err(BackendError::Auth(_))));
    }

    #[test]
    fn request_body_shape_and_debug_hides_key() {
        let config = BackendConfig {
            kind: BackendKind::Remote,
            endpoint_url: Some("http://localhost/v1".into()),
            model_name: Some("some-model".into()),
            ..BackendConfig::default()
        };
        let backend = RemoteBackend::new(config, "sk-very-secret".into()).unwrap();
        let body = backend.request_body("hi");
        assert_eq!(
            body,
            json!({"model": "some-model", "messages": [{"role": "user", "content": "hi"}], "temperature": 0.0})
        );
        assert!(!format!("{backend:?}").contains("sk-very-secret"));
    }

    #[test]
    fn content_extraction() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "x"}}]});
        assert_eq!(extract_content(&v).as_deref(), Some("x"));
        assert_eq!(extract_content(&json!({"choices": []})), None);
    }
}

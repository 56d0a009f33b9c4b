//! Settings resolution: built-in defaults, then the `--config` file, then flags.
//!
//! The config file is a flat TOML table whose keys are the long flag names with
//! `-` replaced by `_` (for example `oversample_factor = 1.5`). Unknown keys are
//! rejected. Relative paths are taken relative to the working directory.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use featsel_core::llm_client::{BackendConfig, BackendKind};
use featsel_core::prompting::PromptTemplate;
use featsel_core::seeding::content_digest;
use featsel_core::selection::{Requirement, RequirementKind, SelectionConfig};
use serde::Deserialize;

use crate::args::{BackendArg, RequirementArg, SelectionFlags};
use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub catalog: Option<PathBuf>,
    pub k: Option<usize>,
    pub buckets: Option<usize>,
    pub oversample_factor: Option<f64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub api_key_env: Option<String>,
    pub max_requests: Option<u64>,
    pub script: Option<PathBuf>,
    pub importance_key: Option<String>,
    pub template: Option<PathBuf>,
    pub objective: Option<String>,
    pub requirements: Option<Vec<String>>,
    pub requirement_texts: Option<Vec<String>>,
    pub max_desc_chars: Option<usize>,
    pub max_retries: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub backoff_base_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub verbose_trace: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub selection: SelectionConfig,
    pub catalog: Option<PathBuf>,
    pub k: Option<usize>,
    pub verbose_trace: bool,
    pub config_path: Option<PathBuf>,
    /// Resolved values as recorded in the manifest (never holds secrets).
    pub resolved: serde_json::Value,
}

fn backend_kind(arg: BackendArg) -> BackendKind {
    match arg {
        BackendArg::Remote => BackendKind::Remote,
        BackendArg::MockImportance => BackendKind::MockImportance,
        BackendArg::MockScripted => BackendKind::MockScripted,
    }
}

fn requirement(arg: RequirementArg) -> Requirement {
    match arg {
        RequirementArg::GroupConsolidation => Requirement::group_consolidation(),
    }
}

pub fn resolve(flags: &SelectionFlags, k_flag: Option<usize>, verbose_flag: bool) -> Result<Settings, CliError> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let defaults = SelectionConfig::default();
    let backend_defaults = BackendConfig::default();

    let backend_arg = match (flags.backend, &file.backend) {
        (Some(b), _) => Some(b),
        (None, Some(name)) => Some(
            BackendArg::from_str(name, true).map_err(|_| CliError::config(format!("unknown backend {name:?}")))?,
        ),
        (None, None) => None,
    };
    let backend = BackendConfig {
        kind: backend_arg.map(backend_kind).unwrap_or(backend_defaults.kind),
        endpoint_url: flags.endpoint.clone().or(file.endpoint),
        model_name: flags.model.clone().or(file.model),
        temperature: flags.temperature.or(file.temperature).unwrap_or(backend_defaults.temperature),
        max_retries: file.max_retries.unwrap_or(backend_defaults.max_retries),
        timeout_secs: file.timeout_secs.unwrap_or(backend_defaults.timeout_secs),
        backoff_base_ms: file.backoff_base_ms.unwrap_or(backend_defaults.backoff_base_ms),
        max_in_flight: file.max_in_flight.unwrap_or(backend_defaults.max_in_flight),
        importance_key: flags
            .importance_key
            .clone()
            .or(file.importance_key)
            .unwrap_or(backend_defaults.importance_key),
        script_path: flags.script.clone().or(file.script),
        api_key_env: flags.api_key_env.clone().or(file.api_key_env).unwrap_or(backend_defaults.api_key_env),
        request_budget: flags.max_requests.or(file.max_requests),
    };

    let mut requirements: Vec<Requirement> = if !flags.requirements.is_empty() {
        flags.requirements.iter().copied().map(requirement).collect()
    } else {
        file.requirements
            .unwrap_or_default()
            .iter()
            .map(|name| {
                RequirementArg::from_str(name, true)
                    .map(requirement)
                    .map_err(|_| CliError::config(format!("unknown requirement {name:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let texts = if flags.requirement_texts.is_empty() {
        file.requirement_texts.unwrap_or_default()
    } else {
        flags.requirement_texts.clone()
    };
    requirements.extend(texts.into_iter().map(|t| Requirement::new(RequirementKind::FreeText, t)));

    let template_path = flags.template.clone().or(file.template);
    let (template, template_digest) = match &template_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read template {}: {e}", path.display())))?;
            let digest = content_digest(text.as_bytes());
            (PromptTemplate::parse(text).map_err(CliError::from)?, Some(digest))
        }
        None => (PromptTemplate::default(), None),
    };

    let selection = SelectionConfig {
        target_k: k_flag.or(file.k).unwrap_or(defaults.target_k),
        buckets: flags.buckets.or(file.buckets).unwrap_or(defaults.buckets),
        oversample_factor: flags.oversample_factor.or(file.oversample_factor).unwrap_or(defaults.oversample_factor),
        objective: flags.objective.clone().or(file.objective).unwrap_or(defaults.objective),
        requirements,
        backend,
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        max_desc_chars: flags.max_desc_chars.or(file.max_desc_chars).unwrap_or(defaults.max_desc_chars),
        workers: flags.workers.or(file.workers).unwrap_or(defaults.workers),
        template,
        token_warning: defaults.token_warning,
    };
    let catalog = flags.catalog.clone().or(file.catalog);
    let k = k_flag.or(file.k);
    let verbose_trace = verbose_flag || file.verbose_trace.unwrap_or(false);

    let resolved = serde_json::json!({
        "catalog": catalog.as_ref().map(|p| p.display().to_string()),
        "k": selection.target_k,
        "buckets": selection.buckets,
        "oversample_factor": selection.oversample_factor,
        "workers": selection.workers,
        "seed": selection.seed,
        "objective": selection.objective,
        "requirements": selection.requirements,
        "max_desc_chars": selection.max_desc_chars,
        "template": template_path.as_ref().map(|p| p.display().to_string()),
        "template_digest": template_digest,
        "backend": selection.backend,
        "verbose_trace": verbose_trace,
    });

    Ok(Settings {
        selection,
        catalog,
        k,
        verbose_trace,
        config_path: flags.config.clone(),
        resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "k = 7\nbuckets = 3\nseed = 11\nbackend = \"mock-scripted\"\nscript = \"s.txt\"\nrequirements = [\"group-consolidation\"]\n",
        )
        .unwrap();
        let flags = SelectionFlags {
            config: Some(path),
            buckets: Some(2),
            ..SelectionFlags::default()
        };
        let s = resolve(&flags, None, false).unwrap();
        assert_eq!(s.selection.target_k, 7);
        assert_eq!(s.selection.buckets, 2);
        assert_eq!(s.selection.seed, 11);
        assert_eq!(s.selection.backend.kind, BackendKind::MockScripted);
        assert!(s.selection.consolidate_groups());
        let s = resolve(&flags, Some(4), false).unwrap();
        assert_eq!(s.selection.target_k, 4);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = FileConfig::parse("kk = 3\n").unwrap_err();
        assert_eq!(err.class, crate::error::ErrorClass::Config);
        assert!(FileConfig::parse("backend = 3\n").is_err());
    }
}

//! Sequential, constraint-aware feature selection.
//!
//! A feature universe (the [`catalog`]) is narrowed one feature at a time by a
//! [`selection::SelectorBackend`]: either a chat-completions endpoint or a
//! deterministic mock. Large universes are split into disjoint buckets, each
//! bucket is reduced independently, and the merged survivors are refined to the
//! final budget ([`partition`]). Classical comparators ([`baselines`]) and a
//! downstream scoring harness ([`evaluation`]) make the selections comparable,
//! and [`pairs`] turns a table of behavioural signals into a pool of
//! multiplicative interaction candidates that flows through the same pipeline.

pub mod baselines;
pub mod catalog;
pub mod evaluation;
pub mod llm_client;
pub mod numeric;
pub mod pairs;
pub mod partition;
pub mod prompting;
pub mod seeding;
pub mod selection;

pub use catalog::{Category, Dataset, FeatureCatalog, FeatureRecord, MetaValue};
pub use partition::{run_pipeline, BucketPlan, PipelineResult};
pub use selection::{
    run_phase, select_step, Requirement, RequirementKind, SelectionConfig, SelectionState,
    SelectorBackend, StepRecord,
};

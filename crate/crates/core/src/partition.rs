//! Two-phase divide-and-conquer selection.
//!
//! Phase 1 splits the universe into `B` disjoint buckets and reduces each bucket
//! independently to `K' = ceil(factor * K / B)` features. Phase 2 merges the
//! survivors and runs one more sequential pass down to `K`. Both phases use the
//! same [`run_phase`](crate::selection::run_phase) loop.
//!
//! Buckets are formed by a seeded shuffle followed by round-robin assignment, so
//! sizes differ by at most one. Buckets share no context with each other.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::FeatureCatalog;
use crate::seeding::derive_seed;
use crate::selection::{
    run_phase, run_phase_until, SelectionConfig, SelectionError, SelectionState, SelectorBackend,
};

#[derive(Error, Debug)]
pub enum PartitionError {
    #[error("cannot split {items} features into {buckets} buckets")]
    TooManyBuckets { buckets: usize, items: usize },
    #[error("oversample factor must be >= 1, got {0}")]
    InvalidFactor(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bucket {bucket} failed: {source}")]
    Bucket {
        bucket: usize,
        #[source]
        source: SelectionError,
    },
    #[error("refinement phase failed: {0}")]
    Refine(#[source] SelectionError),
}

/// The phase-1 split and its per-bucket targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketPlan {
    pub buckets: Vec<Vec<String>>,
    /// `K'` before clamping to bucket sizes.
    pub per_bucket_target: usize,
    /// `min(K', |bucket|)` for every bucket.
    pub bucket_targets: Vec<usize>,
}

impl BucketPlan {
    pub fn pool_size(&self) -> usize {
        self.bucket_targets.iter().sum()
    }
}

/// Seeded shuffle, then round-robin into `b` buckets.
pub fn make_buckets(names: &[String], b: usize, seed: u64) -> Result<Vec<Vec<String>>, PartitionError> {
    if b == 0 || b > names.len() {
        return Err(PartitionError::TooManyBuckets {
            buckets: b,
            items: names.len(),
        });
    }
    let mut order = names.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut buckets: Vec<Vec<String>> = (0..b)
        .map(|i| Vec::with_capacity(names.len() / b + usize::from(i < names.len() % b)))
        .collect();
    for (i, name) in order.into_iter().enumerate() {
        buckets[i % b].push(name);
    }
    Ok(buckets)
}

/// `ceil(factor * k / b)`; values within 1e-9 (relative) of an integer are
/// treated as that integer so exact products are not bumped by rounding noise.
pub fn compute_phase1_target(k: usize, b: usize, factor: f64) -> Result<usize, PartitionError> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(PartitionError::InvalidFactor(factor));
    }
    if b == 0 {
        return Err(PartitionError::Config("buckets must be at least 1".into()));
    }
    let exact = factor * k as f64 / b as f64;
    let nearest = exact.round();
    let target = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok(target as usize)
}

pub fn plan_buckets(names: &[String], config: &SelectionConfig) -> Result<BucketPlan, PartitionError> {
    let buckets = make_buckets(names, config.buckets, derive_seed(config.seed, "partition"))?;
    let per_bucket_target = compute_phase1_target(config.target_k, config.buckets, config.oversample_factor)?;
    let bucket_targets: Vec<usize> = buckets.iter().map(|b| per_bucket_target.min(b.len())).collect();
    let plan = BucketPlan {
        buckets,
        per_bucket_target,
        bucket_targets,
    };
    if plan.pool_size() < config.target_k {
        return Err(PartitionError::Config(format!(
            "buckets can contribute only {} features after clamping, fewer than k = {}",
            plan.pool_size(),
            config.target_k
        )));
    }
    Ok(plan)
}

/// Output of a full two-phase run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub plan: BucketPlan,
    pub phase1_states: Vec<SelectionState>,
    /// Concatenation of the phase-1 selections in bucket order.
    pub refined_pool: Vec<String>,
    /// Whether phase 2 ran; when false `final_state` is the single bucket's state.
    pub refined: bool,
    pub final_state: SelectionState,
    pub final_selected: Vec<String>,
}

pub fn run_pipeline(
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
    backend: &dyn SelectorBackend,
) -> Result<PipelineResult, PartitionError> {
    config.validate().map_err(|e| PartitionError::Config(e.to_string()))?;
    if config.target_k > catalog.len() {
        return Err(PartitionError::Config(format!(
            "k = {} exceeds the catalog size of {} features",
            config.target_k,
            catalog.len()
        )));
    }
    let plan = plan_buckets(&catalog.names(), config)?;
    info!(
        "phase 1: {} buckets, K' = {}, pool of {}",
        plan.buckets.len(),
        plan.per_bucket_target,
        plan.pool_size()
    );

    let phase1_states = run_buckets(&plan, catalog, config, backend)?;
    let refined_pool: Vec<String> = phase1_states
        .iter()
        .flat_map(|s| s.selected.iter().cloned())
        .collect();

    let refined = !(plan.buckets.len() == 1 && refined_pool.len() == config.target_k);
    let final_state = if !refined {
        phase1_states[0].clone()
    } else {
        info!("phase 2: refining {} candidates to {}", refined_pool.len(), config.target_k);
        run_phase(&refined_pool, config.target_k, catalog, config, backend).map_err(PartitionError::Refine)?
    };
    Ok(PipelineResult {
        plan,
        final_selected: final_state.selected.clone(),
        phase1_states,
        refined_pool,
        refined,
        final_state,
    })
}

/// Phase 1 across at most `config.workers` threads. The first failure stops
/// workers from starting further steps and is reported with its bucket index.
fn run_buckets(
    plan: &BucketPlan,
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
    backend: &dyn SelectorBackend,
) -> Result<Vec<SelectionState>, PartitionError> {
    let n = plan.buckets.len();
    let workers = if backend.order_sensitive() {
        1
    } else {
        config.workers.clamp(1, n)
    };
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<SelectionState, SelectionError>>>> =
        Mutex::new((0..n).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let outcome = run_phase_until(
                    &plan.buckets[i],
                    plan.bucket_targets[i],
                    catalog,
                    config,
                    backend,
                    &|| failed.load(Ordering::SeqCst),
                );
                if outcome.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });

    let mut results = results.into_inner().expect("results lock");
    // Report the first real failure, not a bucket that merely observed cancellation.
    let failed_at = results
        .iter()
        .position(|r| matches!(r, Some(Err(e)) if !matches!(e, SelectionError::Cancelled)))
        .or_else(|| results.iter().position(|r| matches!(r, Some(Err(_)))));
    if let Some(bucket) = failed_at {
        let Some(Err(source)) = results.swap_remove(bucket) else {
            unreachable!("position matched an error")
        };
        return Err(PartitionError::Bucket { bucket, source });
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("every bucket ran").expect("no failures"))
        .collect())
}

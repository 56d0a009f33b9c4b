//! Classical comparators: L1-regularized logistic regression ranked by
//! coefficient magnitude, and seeded random selection.
//!
//! # Objective
//!
//! With (optionally standardized) features `z_i`, labels `y_i ∈ {0,1}` and an
//! unpenalized intercept `b`, the Lasso fit minimizes
//!
//! ```text
//! F(b, β) = (1/n) Σ_i [ log(1 + exp(b + βᵀz_i)) − y_i (b + βᵀz_i) ] + λ ‖β‖₁,   λ = 1 / (C n)
//! ```
//!
//! which is the usual `C · Σ loss + ‖β‖₁` objective divided by `C n`, so a given
//! `C` means the same thing here as in the common C-parameterized solvers.
//!
//! The solver is proximal gradient descent (ISTA) with a backtracking line search
//! on the sufficient-decrease condition, which keeps `F` non-increasing.
//!
//! With `standardize = true` each column is centred and divided by its population
//! standard deviation (constant columns are only centred), and the reported
//! coefficients are in those standardized units. [`FittedLinearModel::raw_coefficients`]
//! maps them back to the original scale.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Dataset;
use crate::numeric::{dot, logistic_loss, sigmoid};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BaselineError {
    #[error("training data must contain both classes")]
    SingleClassData,
    #[error("need at least two rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("requested {k} features but only {available} are available")]
    KTooLarge { k: usize, available: usize },
    #[error("invalid lasso configuration: {0}")]
    Config(String),
    #[error("solver did not converge within {0} iterations")]
    DidNotConverge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest parameter change per iteration.
    pub tolerance: f64,
    pub standardize: bool,
    /// Return [`BaselineError::DidNotConverge`] instead of an unconverged model.
    pub strict: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            max_iters: 10_000,
            tolerance: 1e-6,
            standardize: true,
            strict: false,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(BaselineError::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(BaselineError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Penalty weight on the per-sample averaged loss.
    pub fn lambda(&self, n_rows: usize) -> f64 {
        1.0 / (self.c * n_rows as f64)
    }
}

/// Column centring and scaling applied before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Self {
        let n = data.n_rows() as f64;
        let p = data.n_features();
        let mut means = vec![0.0; p];
        for row in data.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; p];
        for row in data.rows() {
            for j in 0..p {
                scales[j] += (row[j] - means[j]).powi(2);
            }
        }
        for s in &mut scales {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Self { means, scales }
    }

    pub fn apply(&self, data: &Dataset) -> Vec<Vec<f64>> {
        data.rows()
            .iter()
            .map(|row| {
                row.iter()
                    .zip(self.means.iter().zip(&self.scales))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLinearModel {
    pub feature_names: Vec<String>,
    /// One per feature, aligned with `feature_names`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations_used: usize,
    pub standardization: Option<Standardization>,
}

impl FittedLinearModel {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }

    /// Coefficients and intercept on the original feature scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        match &self.standardization {
            None => (self.coefficients.clone(), self.intercept),
            Some(s) => {
                let beta: Vec<f64> = self
                    .coefficients
                    .iter()
                    .zip(&s.scales)
                    .map(|(b, sc)| b / sc)
                    .collect();
                let shift: f64 = beta.iter().zip(&s.means).map(|(b, m)| b * m).sum();
                (beta, self.intercept - shift)
            }
        }
    }
}

/// `x ↦ sign(x) · max(|x| − t, 0)`, the proximal operator of `t‖·‖₁`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Mean logistic loss and its gradient `(∂/∂b, ∂/∂β)`.
pub fn logistic_loss_and_grad(rows: &[Vec<f64>], labels: &[u8], intercept: f64, beta: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut g0 = 0.0;
    let mut g = vec![0.0; beta.len()];
    for (row, &y) in rows.iter().zip(labels) {
        let z = intercept + dot(beta, row);
        let y = f64::from(y);
        loss += logistic_loss(z, y);
        let r = sigmoid(z) - y;
        g0 += r;
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    g.iter_mut().for_each(|v| *v /= n);
    (loss / n, g0 / n, g)
}

fn mean_loss(rows: &[Vec<f64>], labels: &[u8], intercept: f64, beta: &[f64]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(row, &y)| logistic_loss(intercept + dot(beta, row), f64::from(y)))
        .sum::<f64>()
        / rows.len() as f64
}

/// Penalized objective `F(b, β)` for already-transformed rows.
pub fn lasso_objective(rows: &[Vec<f64>], labels: &[u8], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    mean_loss(rows, labels, intercept, beta) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the L1 optimality conditions at `(b, β)`:
/// `|∂f/∂b|`, `|∂f/∂β_j + λ sign β_j|` for nonzero `β_j`, and
/// `max(|∂f/∂β_j| − λ, 0)` for zero `β_j`.
pub fn kkt_violation(rows: &[Vec<f64>], labels: &[u8], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let (_, g0, g) = logistic_loss_and_grad(rows, labels, intercept, beta);
    let mut worst = g0.abs();
    for (gj, bj) in g.iter().zip(beta) {
        let v = if *bj != 0.0 {
            (gj + lambda * bj.signum()).abs()
        } else {
            (gj.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Fit L1-regularized logistic regression by proximal gradient descent.
pub fn fit_l1_logistic(data: &Dataset, cfg: &LassoConfig) -> Result<FittedLinearModel, BaselineError> {
    cfg.validate()?;
    if data.n_rows() < 2 {
        return Err(BaselineError::TooFewRows(data.n_rows()));
    }
    if !data.has_both_classes() {
        return Err(BaselineError::SingleClassData);
    }
    let standardization = cfg.standardize.then(|| Standardization::fit(data));
    let rows = match &standardization {
        Some(s) => s.apply(data),
        None => data.rows().to_vec(),
    };
    let labels = data.labels();
    let lambda = cfg.lambda(data.n_rows());
    let p = data.n_features();

    // Start from the base-rate intercept.
    let rate = data.n_positive() as f64 / data.n_rows() as f64;
    let mut intercept = (rate / (1.0 - rate)).ln();
    let mut beta = vec![0.0; p];
    let mut step: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut objective = lasso_objective(&rows, labels, intercept, &beta, lambda);

    while iterations < cfg.max_iters {
        iterations += 1;
        let (loss, g0, g) = logistic_loss_and_grad(&rows, labels, intercept, &beta);
        step = (step * 2.0).min(1e4);
        let (next_b, next_beta, next_loss) = loop {
            let cand_b = intercept - step * g0;
            let cand: Vec<f64> = beta
                .iter()
                .zip(&g)
                .map(|(b, gj)| soft_threshold(b - step * gj, step * lambda))
                .collect();
            let d0 = cand_b - intercept;
            let d: Vec<f64> = cand.iter().zip(&beta).map(|(a, b)| a - b).collect();
            let lin = g0 * d0 + dot(&g, &d);
            let quad = (d0 * d0 + dot(&d, &d)) / (2.0 * step);
            let cand_loss = mean_loss(&rows, labels, cand_b, &cand);
            if cand_loss <= loss + lin + quad + 1e-15 || step < 1e-12 {
                break (cand_b, cand, cand_loss);
            }
            step *= 0.5;
        };
        let change = beta
            .iter()
            .zip(&next_beta)
            .map(|(a, b)| (a - b).abs())
            .fold((intercept - next_b).abs(), f64::max);
        let next_objective = next_loss + lambda * next_beta.iter().map(|b| b.abs()).sum::<f64>();
        debug_assert!(
            next_objective <= objective + 1e-12 * objective.abs().max(1.0),
            "objective increased: {objective} -> {next_objective}"
        );
        intercept = next_b;
        beta = next_beta;
        objective = next_objective;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        if cfg.strict {
            return Err(BaselineError::DidNotConverge(iterations));
        }
        warn!("lasso did not converge within {iterations} iterations");
    }
    Ok(FittedLinearModel {
        feature_names: data.feature_names().to_vec(),
        coefficients: beta,
        intercept,
        converged,
        iterations_used: iterations,
        standardization,
    })
}

/// Names by `|β|` descending, ties broken by name; exactly `k` long.
pub fn lasso_top_k(model: &FittedLinearModel, k: usize) -> Result<Vec<String>, BaselineError> {
    let p = model.coefficients.len();
    if k > p {
        return Err(BaselineError::KTooLarge { k, available: p });
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        model.coefficients[b]
            .abs()
            .total_cmp(&model.coefficients[a].abs())
            .then_with(|| model.feature_names[a].cmp(&model.feature_names[b]))
    });
    let nonzero = model.coefficients.iter().filter(|c| **c != 0.0).count();
    if nonzero < k {
        warn!("only {nonzero} nonzero lasso coefficients; {} zero-weight features fill the top-{k}", k - nonzero);
    }
    Ok(order[..k].iter().map(|&j| model.feature_names[j].clone()).collect())
}

/// First `k` names of a seeded uniform shuffle.
pub fn random_select(names: &[String], k: usize, seed: u64) -> Result<Vec<String>, BaselineError> {
    if k > names.len() {
        return Err(BaselineError::KTooLarge {
            k,
            available: names.len(),
        });
    }
    let mut shuffled = names.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffled.truncate(k);
    Ok(shuffled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn soft_threshold_definition() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn separable_toy_positive_coefficient() {
        let ds = Dataset::new(
            vec!["x".into()],
            vec![vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let model = fit_l1_logistic(&ds, &LassoConfig { c: 10.0, ..LassoConfig::default() }).unwrap();
        assert!(model.coefficients[0] > 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let ds = Dataset::new(vec!["x".into()], vec![vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        assert_eq!(fit_l1_logistic(&ds, &LassoConfig::default()).unwrap_err(), BaselineError::SingleClassData);
        assert!(fit_l1_logistic(&ds, &LassoConfig { c: -1.0, ..LassoConfig::default() }).is_err());
    }

    fn model(coefs: &[(&str, f64)]) -> FittedLinearModel {
        FittedLinearModel {
            feature_names: coefs.iter().map(|c| c.0.to_string()).collect(),
            coefficients: coefs.iter().map(|c| c.1).collect(),
            intercept: 0.0,
            converged: true,
            iterations_used: 1,
            standardization: None,
        }
    }

    #[test]
    fn top_k_by_magnitude() {
        let m = model(&[("a", 0.5), ("b", -0.9), ("c", 0.1)]);
        assert_eq!(lasso_top_k(&m, 2).unwrap(), ["b", "a"]);
        let zeros = model(&[("c", 0.0), ("a", 0.0), ("b", 0.0)]);
        assert_eq!(lasso_top_k(&zeros, 1).unwrap(), ["a"]);
        assert!(matches!(lasso_top_k(&m, 4), Err(BaselineError::KTooLarge { k: 4, available: 3 })));
    }

    #[test]
    fn random_select_contract() {
        let names: Vec<String> = (0..8).map(|i| format!("n{i}")).collect();
        let all = random_select(&names, 8, 3).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, names);
        assert_eq!(random_select(&names, 3, 42).unwrap(), random_select(&names, 3, 42).unwrap());
        assert!(random_select(&names, 9, 1).is_err());
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0).collect();
            let prob = sigmoid(dot(&w, &x) * 0.5);
            labels.push(u8::from(rng.random::<f64>() < prob));
            rows.push(x);
        }
        Dataset::new((0..p).map(|j| format!("x{j}")).collect(), rows, labels).unwrap()
    }

    #[test]
    fn fitted_model_satisfies_kkt() {
        for seed in 0..5 {
            let ds = random_problem(seed, 200, 6);
            let cfg = LassoConfig { c: 0.05, ..LassoConfig::default() };
            let m = fit_l1_logistic(&ds, &cfg).unwrap();
            assert!(m.converged);
            let rows = m.standardization.as_ref().unwrap().apply(&ds);
            let v = kkt_violation(&rows, ds.labels(), m.intercept, &m.coefficients, cfg.lambda(ds.n_rows()));
            assert!(v < 10.0 * cfg.tolerance, "seed {seed}: kkt violation {v}");
        }
    }

    #[test]
    fn raw_coefficients_reproduce_margins() {
        let ds = random_problem(9, 100, 3);
        let m = fit_l1_logistic(&ds, &LassoConfig { c: 1.0, ..LassoConfig::default() }).unwrap();
        let z = m.standardization.as_ref().unwrap().apply(&ds);
        let (raw, b) = m.raw_coefficients();
        for (xr, zr) in ds.rows().iter().zip(&z) {
            let a = m.intercept + dot(&m.coefficients, zr);
            let c = b + dot(&raw, xr);
            assert!((a - c).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn top_k_invariant_under_positive_rescaling(
            coefs in proptest::collection::vec(-5.0f64..5.0, 1..12),
            scale in 0.001f64..1000.0,
            k_frac in 0.0f64..1.0,
        ) {
            let names: Vec<String> = (0..coefs.len()).map(|i| format!("f{i}")).collect();
            let mut m = FittedLinearModel {
                feature_names: names,
                coefficients: coefs.clone(),
                intercept: 0.0,
                converged: true,
                iterations_used: 0,
                standardization: None,
            };
            let k = ((coefs.len() as f64) * k_frac) as usize;
            let before = lasso_top_k(&m, k).unwrap();
            m.coefficients.iter_mut().for_each(|c| *c *= scale);
            prop_assert_eq!(lasso_top_k(&m, k).unwrap(), before);
        }

        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>()) {
            let ds = random_problem(seed, 30, 4);
            let rows = ds.rows().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let b: f64 = rng.random_range(-1.0..1.0);
            let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g0, g) = logistic_loss_and_grad(&rows, ds.labels(), b, &beta);
            let h = 1e-5;
            let fd0 = (mean_loss(&rows, ds.labels(), b + h, &beta) - mean_loss(&rows, ds.labels(), b - h, &beta)) / (2.0 * h);
            prop_assert!((fd0 - g0).abs() <= 1e-5 * g0.abs().max(1e-3));
            for j in 0..4 {
                let mut up = beta.clone();
                up[j] += h;
                let mut dn = beta.clone();
                dn[j] -= h;
                let fd = (mean_loss(&rows, ds.labels(), b, &up) - mean_loss(&rows, ds.labels(), b, &dn)) / (2.0 * h);
                prop_assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3));
            }
        }
    }
}

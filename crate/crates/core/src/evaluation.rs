//! Downstream scoring of a selected subset.
//!
//! Selected columns are fed to a plain logistic regression (a `1e-8` ridge keeps
//! the optimum unique on collinear subsets) and scored with ROC-AUC or normalized
//! entropy:
//!
//! ```text
//! NE = mean_i −[y_i ln p_i + (1 − y_i) ln(1 − p_i)]  /  −[p̄ ln p̄ + (1 − p̄) ln(1 − p̄)]
//! ```
//!
//! where `p̄` is the positive rate of the labels being scored and predictions are
//! clamped to `[1e-15, 1 − 1e-15]`. NE of 1 means no lift over the base rate.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Category, CatalogError, Dataset, FeatureCatalog, FeatureRecord};
use crate::numeric::{dot, logistic_loss, sigmoid};
use crate::seeding::rng_for;

pub const PROB_CLAMP: f64 = 1e-15;
pub const EVAL_RIDGE: f64 = 1e-8;
pub const LABEL_COLUMN: &str = "label";

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClassData,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("selection is empty")]
    EmptySelection,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("report csv line {line}: {message}")]
    ReportParse { line: usize, message: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Area under the ROC curve: `(concordant + ½ tied) / (n_pos · n_neg)`, computed
/// from mid-ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassData);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += mid * pos_in_run as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean log-loss divided by the log-loss of the constant base-rate predictor.
pub fn normalized_entropy(preds: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds.len(), labels.len()));
    }
    if let Some(i) = preds.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(EvalError::SingleClassData);
    }
    let loss: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n;
    let rate = n_pos as f64 / n;
    let base = -(rate * rate.ln() + (1.0 - rate) * (1.0 - rate).ln());
    Ok(loss / base)
}

/// Distinct non-empty groups among `selected`; ungrouped features count as
/// their own singleton group.
pub fn group_count<S: AsRef<str>>(selected: &[S], catalog: &FeatureCatalog) -> Result<usize, EvalError> {
    let mut groups = HashSet::new();
    let mut singletons = HashSet::new();
    for name in selected {
        let record = catalog
            .get(name.as_ref())
            .ok_or_else(|| EvalError::UnknownFeature(name.as_ref().to_string()))?;
        match record.group_id() {
            Some(g) => {
                groups.insert(g);
            }
            None => {
                singletons.insert(record.name.as_str());
            }
        }
    }
    Ok(groups.len() + singletons.len())
}

/// Unpenalized (up to the tiny ridge) logistic regression on raw columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_proba(&self, data: &Dataset) -> Result<Vec<f64>, EvalError> {
        let projected = data.project(&self.feature_names)?;
        Ok(projected
            .rows()
            .iter()
            .map(|row| sigmoid(self.intercept + dot(&self.weights, row)))
            .collect())
    }
}

/// `(1/n) Σ loss + (ridge/2)(b² + ‖w‖²)` and its gradient `(∂/∂b, ∂/∂w)`.
pub fn ridge_objective_and_grad(
    rows: &[Vec<f64>],
    labels: &[u8],
    intercept: f64,
    weights: &[f64],
    ridge: f64,
) -> (f64, f64, Vec<f64>) {
    let n = rows.len() as f64;
    let mut value = 0.0;
    let mut g0 = 0.0;
    let mut g = vec![0.0; weights.len()];
    for (row, &y) in rows.iter().zip(labels) {
        let z = intercept + dot(weights, row);
        let y = f64::from(y);
        value += logistic_loss(z, y);
        let r = sigmoid(z) - y;
        g0 += r;
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    value /= n;
    g0 = g0 / n + ridge * intercept;
    for (gj, wj) in g.iter_mut().zip(weights) {
        *gj = *gj / n + ridge * wj;
    }
    value += 0.5 * ridge * (intercept * intercept + dot(weights, weights));
    (value, g0, g)
}

fn ridge_objective(rows: &[Vec<f64>], labels: &[u8], theta: &[f64], ridge: f64) -> f64 {
    let n = rows.len() as f64;
    let (b, w) = (theta[0], &theta[1..]);
    rows.iter()
        .zip(labels)
        .map(|(row, &y)| logistic_loss(b + dot(w, row), f64::from(y)))
        .sum::<f64>()
        / n
        + 0.5 * ridge * dot(theta, theta)
}

/// Damped Newton's method on [`ridge_objective_and_grad`].
pub fn fit_logistic(data: &Dataset, ridge: f64) -> Result<LogisticModel, EvalError> {
    if !data.has_both_classes() {
        return Err(EvalError::SingleClassData);
    }
    let rows = data.rows();
    let labels = data.labels();
    let p = data.n_features();
    let dim = p + 1;
    let n = rows.len() as f64;
    let rate = data.n_positive() as f64 / n;
    let mut theta = vec![0.0; dim];
    theta[0] = (rate / (1.0 - rate)).ln();
    let mut value = ridge_objective(rows, labels, &theta, ridge);
    let mut iterations = 0;

    for _ in 0..100 {
        iterations += 1;
        let (_, g0, g) = ridge_objective_and_grad(rows, labels, theta[0], &theta[1..], ridge);
        let grad = DVector::from_iterator(dim, std::iter::once(g0).chain(g));
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        let mut x = vec![0.0; dim];
        x[0] = 1.0;
        for row in rows {
            x[1..].copy_from_slice(row);
            let s = sigmoid(dot(&theta, &x));
            let wgt = s * (1.0 - s) / n;
            if wgt == 0.0 {
                continue;
            }
            for a in 0..dim {
                let xa = wgt * x[a];
                for b in a..dim {
                    hess[(a, b)] += xa * x[b];
                }
            }
        }
        for a in 0..dim {
            hess[(a, a)] += ridge;
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        let direction = match hess.cholesky() {
            Some(chol) => -chol.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&direction);
        if slope >= 0.0 || direction.amax() < 1e-12 {
            break;
        }
        let mut step = 1.0;
        let accepted = loop {
            let cand: Vec<f64> = theta.iter().zip(direction.iter()).map(|(t, d)| t + step * d).collect();
            let cand_value = ridge_objective(rows, labels, &cand, ridge);
            if cand_value <= value + 1e-4 * step * slope {
                break Some((cand, cand_value));
            }
            step *= 0.5;
            if step < 1e-10 {
                break None;
            }
        };
        let Some((cand, cand_value)) = accepted else {
            break;
        };
        let improvement = value - cand_value;
        let moved = direction.amax() * step;
        theta = cand;
        value = cand_value;
        if moved < 1e-10 || improvement < 1e-15 {
            break;
        }
    }

    Ok(LogisticModel {
        feature_names: data.feature_names().to_vec(),
        intercept: theta[0],
        weights: theta[1..].to_vec(),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ne,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Ne => "ne",
        }
    }

    pub fn higher_is_better(&self) -> bool {
        matches!(self, Metric::Auc)
    }

    pub fn score(&self, preds: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
        match self {
            Metric::Auc => auc(preds, labels),
            Metric::Ne => normalized_entropy(preds, labels),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auc" => Ok(Metric::Auc),
            "ne" => Ok(Metric::Ne),
            other => Err(format!("unknown metric {other:?} (expected auc or ne)")),
        }
    }
}

/// Fit on `train[selected]`, score train and test with `metric`.
pub fn train_eval(
    train: &Dataset,
    test: &Dataset,
    selected: &[String],
    metric: Metric,
) -> Result<(f64, f64), EvalError> {
    if selected.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    let projected = train.project(selected).map_err(|e| match e {
        CatalogError::UnknownFeature(n) => EvalError::UnknownFeature(n),
        other => EvalError::Catalog(other),
    })?;
    let model = fit_logistic(&projected, EVAL_RIDGE)?;
    let train_pred = model.predict_proba(train)?;
    let test_pred = model.predict_proba(test).map_err(|e| match e {
        EvalError::Catalog(CatalogError::UnknownFeature(n)) => EvalError::UnknownFeature(n),
        other => other,
    })?;
    Ok((
        metric.score(&train_pred, train.labels())?,
        metric.score(&test_pred, test.labels())?,
    ))
}

/// `(train_auc, test_auc)` of a logistic model on the selected columns.
pub fn train_eval_logistic(train: &Dataset, test: &Dataset, selected: &[String]) -> Result<(f64, f64), EvalError> {
    train_eval(train, test, selected, Metric::Auc)
}

/// Parameters of a planted-signal classification corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_features: usize,
    pub n_informative: usize,
    pub n_groups: usize,
    pub n_rows_train: usize,
    pub n_rows_test: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_features: 200,
            n_informative: 10,
            n_groups: 4,
            n_rows_train: 5000,
            n_rows_test: 2000,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_features == 0 {
            return Err(EvalError::Spec("need at least one feature".into()));
        }
        if self.n_informative > self.n_features {
            return Err(EvalError::Spec("n_informative exceeds n_features".into()));
        }
        if self.n_groups == 0 {
            return Err(EvalError::Spec("n_groups must be at least 1".into()));
        }
        if self.n_rows_train < 2 || self.n_rows_test < 2 {
            return Err(EvalError::Spec("need at least two rows per split".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(EvalError::Spec("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Groups that host the informative features.
    pub fn informative_groups(&self) -> usize {
        self.n_groups.div_ceil(3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Dataset,
    pub test: Dataset,
    pub catalog: FeatureCatalog,
    /// Informative feature names in catalog order.
    pub truth: Vec<String>,
    /// True weights keyed by feature name (zero for noise features).
    pub weights: BTreeMap<String, f64>,
}

impl SyntheticCorpus {
    /// Writes `catalog.jsonl`, `train.csv`, `test.csv` and `truth.json`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("catalog.jsonl"), self.catalog.to_jsonl())?;
        std::fs::write(dir.join("train.csv"), self.train.to_csv_string(LABEL_COLUMN))?;
        std::fs::write(dir.join("test.csv"), self.test.to_csv_string(LABEL_COLUMN))?;
        let truth = serde_json::to_string_pretty(&self.truth).expect("serializes");
        std::fs::write(dir.join("truth.json"), truth + "\n")?;
        Ok(())
    }
}

/// Standard-normal features; `y ~ Bernoulli(σ(wᵀx + ε))` with `w` nonzero on
/// the informative features only and `ε ~ N(0, noise_sigma²)`. Informative
/// features sit in the first `ceil(n_groups / 3)` groups; the rest are spread
/// over all groups. Catalog importance is `|w_j| + 0.05·|N(0,1)|`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, EvalError> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, "synthetic");
    let width = (spec.n_features.saturating_sub(1)).to_string().len().max(3);
    let names: Vec<String> = (0..spec.n_features).map(|j| format!("f{j:0width$}")).collect();
    let group_width = (spec.n_groups.saturating_sub(1)).to_string().len().max(2);
    let group_name = |g: usize| format!("g{g:0group_width$}");

    let mut order: Vec<usize> = (0..spec.n_features).collect();
    order.shuffle(&mut rng);
    let mut informative = vec![false; spec.n_features];
    for &j in &order[..spec.n_informative] {
        informative[j] = true;
    }

    let mut weights = vec![0.0; spec.n_features];
    let mut records = Vec::with_capacity(spec.n_features);
    let categories = [Category::Dense, Category::Float, Category::Sparse];
    for j in 0..spec.n_features {
        let group = if informative[j] {
            let magnitude: f64 = rng.random_range(0.5..1.5);
            weights[j] = if rng.random::<bool>() { magnitude } else { -magnitude };
            rng.random_range(0..spec.informative_groups())
        } else {
            rng.random_range(0..spec.n_groups)
        };
        let noise: f64 = rng.sample(StandardNormal);
        let importance = weights[j].abs() + 0.05 * noise.abs();
        let category = categories[rng.random_range(0..categories.len())];
        records.push(
            FeatureRecord::new(&names[j], format!("synthetic standard-normal signal #{j}"))
                .with_group(group_name(group))
                .with_category(category)
                .with_number("importance", importance),
        );
    }

    let mut draw = |rows: usize| -> Result<Dataset, EvalError> {
        let mut data = Vec::with_capacity(rows);
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            let x: Vec<f64> = (0..spec.n_features).map(|_| rng.sample(StandardNormal)).collect();
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_sigma;
            let p = sigmoid(dot(&weights, &x) + eps);
            labels.push(u8::from(rng.random::<f64>() < p));
            data.push(x);
        }
        Ok(Dataset::new(names.clone(), data, labels)?)
    };
    let train = draw(spec.n_rows_train)?;
    let test = draw(spec.n_rows_test)?;

    Ok(SyntheticCorpus {
        train,
        test,
        catalog: FeatureCatalog::new(records)?,
        truth: names
            .iter()
            .zip(&informative)
            .filter(|(_, &inf)| inf)
            .map(|(n, _)| n.clone())
            .collect(),
        weights: names.iter().cloned().zip(weights).collect(),
    })
}

/// One row of a results table: a method's selection at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: String,
    pub k: usize,
    pub method: String,
    pub group_count: usize,
    pub train_metric: f64,
    pub test_metric: f64,
    pub metric_name: Metric,
    pub selected: Vec<String>,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Method used as the reference for the "win" columns.
pub const WIN_BASELINE: &str = "random";

const CSV_HEADER: [&str; 9] = [
    "task", "k", "method", "metric", "groups", "train", "test", "selected", "config_digest",
];

/// Report rows ordered by task (first appearance), then K ascending, keeping
/// input order within a block.
fn grouped(reports: &[EvaluationReport]) -> Vec<Vec<&EvaluationReport>> {
    let mut tasks: Vec<&str> = Vec::new();
    for r in reports {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    let mut blocks = Vec::new();
    for task in tasks {
        let mut ks: Vec<usize> = reports.iter().filter(|r| r.task == task).map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            blocks.push(reports.iter().filter(|r| r.task == task && r.k == k).collect());
        }
    }
    blocks
}

/// Test-metric win over [`WIN_BASELINE`] in the same block: absolute difference
/// (positive = better) and the same relative to the baseline, in percent.
fn win_over_baseline(row: &EvaluationReport, block: &[&EvaluationReport]) -> Option<(f64, f64)> {
    if row.method == WIN_BASELINE {
        return None;
    }
    let base = block
        .iter()
        .find(|r| r.method == WIN_BASELINE && r.metric_name == row.metric_name)?;
    let abs = if row.metric_name.higher_is_better() {
        row.test_metric - base.test_metric
    } else {
        base.test_metric - row.test_metric
    };
    Some((abs, 100.0 * abs / base.test_metric.abs()))
}

pub fn render_report(reports: &[EvaluationReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(reports),
        ReportFormat::Csv => render_csv(reports),
    }
}

fn render_markdown(reports: &[EvaluationReport]) -> String {
    let mut out = String::from(
        "| Task | K | Method | Metric | Groups | Train | Test | Win vs random (abs) | Win vs random (rel %) |\n\
         |---|---:|---|---|---:|---:|---:|---:|---:|\n",
    );
    for block in grouped(reports) {
        let best = block
            .iter()
            .map(|r| {
                if r.metric_name.higher_is_better() {
                    r.test_metric
                } else {
                    -r.test_metric
                }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        for row in &block {
            let signed = if row.metric_name.higher_is_better() {
                row.test_metric
            } else {
                -row.test_metric
            };
            let test = if signed == best {
                format!("**{:.4}**", row.test_metric)
            } else {
                format!("{:.4}", row.test_metric)
            };
            let (win_abs, win_rel) = match win_over_baseline(row, &block) {
                Some((a, r)) => (format!("{a:+.4}"), format!("{r:+.3}%")),
                None => ("-".to_string(), "-".to_string()),
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.4} | {} | {} | {} |\n",
                row.task,
                row.k,
                row.method,
                row.metric_name.as_str().to_uppercase(),
                row.group_count,
                row.train_metric,
                test,
                win_abs,
                win_rel
            ));
        }
    }
    out
}

fn render_csv(reports: &[EvaluationReport]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(CSV_HEADER).expect("in-memory write");
    for block in grouped(reports) {
        for r in block {
            wtr.write_record([
                r.task.clone(),
                r.k.to_string(),
                r.method.clone(),
                r.metric_name.to_string(),
                r.group_count.to_string(),
                format!("{}", r.train_metric),
                format!("{}", r.test_metric),
                r.selected.join(";"),
                r.config_digest.clone(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
}

pub fn parse_report_csv(text: &str) -> Result<Vec<EvaluationReport>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| EvalError::ReportParse { line: 1, message: e.to_string() })?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(EvalError::ReportParse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| EvalError::ReportParse { line, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |idx: usize| -> Result<f64, EvalError> {
            rec[idx].parse().map_err(|_| bad(format!("bad number in column {}", CSV_HEADER[idx])))
        };
        let int = |idx: usize| -> Result<usize, EvalError> {
            rec[idx].parse().map_err(|_| bad(format!("bad integer in column {}", CSV_HEADER[idx])))
        };
        out.push(EvaluationReport {
            task: rec[0].to_string(),
            k: int(1)?,
            method: rec[2].to_string(),
            metric_name: rec[3].parse().map_err(bad)?,
            group_count: int(4)?,
            train_metric: num(5)?,
            test_metric: num(6)?,
            selected: if rec[7].is_empty() {
                Vec::new()
            } else {
                rec[7].split(';').map(str::to_string).collect()
            },
            config_digest: rec[8].to_string(),
        });
    }
    Ok(out)
}

//! Multiplicative signal-pair pools and value-model scoring.
//!
//! A signal table holds per-row predicted probabilities (`p_like`, `p_click`, ...)
//! next to observed engagement outcomes. Every unordered pair of signals becomes
//! a candidate interaction term annotated with its correlations, and the pool is
//! emitted as an ordinary [`FeatureCatalog`] so selection treats pairs exactly
//! like features.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Category, CatalogError, FeatureCatalog, FeatureRecord, MetaValue};

/// Column prefix marking an outcome in signal-table CSVs.
pub const OUTCOME_PREFIX: &str = "outcome_";
pub const PAIR_SEPARATOR: &str = "×";
pub const DEGENERATE_KEY: &str = "degenerate";
pub const COVERAGE_KEY: &str = "coverage";
pub const IMPORTANCE_KEY: &str = "importance";

#[derive(Error, Debug)]
pub enum PairsError {
    #[error("need at least 2 signals, found {0}")]
    TooFewSignals(usize),
    #[error("need at least 3 rows, found {0}")]
    TooFewRows(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance input")]
    ZeroVariance,
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("row {row}, column {column:?}: {message}")]
    BadValue { row: usize, column: String, message: String },
    #[error("signal table csv: {0}")]
    Csv(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

impl std::str::FromStr for CorrelationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            other => Err(format!("unknown correlation method {other:?}")),
        }
    }
}

/// Signals stored column-major: `signals[j][i]` is signal `j` on row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    signal_names: Vec<String>,
    signals: Vec<Vec<f64>>,
    outcomes: BTreeMap<String, Vec<f64>>,
}

impl SignalTable {
    pub fn new(
        signal_names: Vec<String>,
        signals: Vec<Vec<f64>>,
        outcomes: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, PairsError> {
        if signal_names.len() != signals.len() {
            return Err(PairsError::LengthMismatch(signal_names.len(), signals.len()));
        }
        let mut seen = HashSet::new();
        for name in &signal_names {
            if !seen.insert(name.as_str()) {
                return Err(PairsError::DuplicateColumn(name.clone()));
            }
        }
        let n_rows = signals
            .first()
            .map(Vec::len)
            .or_else(|| outcomes.values().next().map(Vec::len))
            .unwrap_or(0);
        for (name, col) in signal_names.iter().zip(&signals) {
            if col.len() != n_rows {
                return Err(PairsError::LengthMismatch(col.len(), n_rows));
            }
            if let Some(row) = col.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(PairsError::BadValue {
                    row,
                    column: name.clone(),
                    message: format!("signal value {} outside [0, 1]", col[row]),
                });
            }
        }
        for (name, col) in &outcomes {
            if col.len() != n_rows {
                return Err(PairsError::LengthMismatch(col.len(), n_rows));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(PairsError::BadValue {
                    row,
                    column: name.clone(),
                    message: "outcome value is not finite".into(),
                });
            }
        }
        Ok(Self { signal_names, signals, outcomes })
    }

    pub fn signal_names(&self) -> &[String] {
        &self.signal_names
    }

    pub fn n_rows(&self) -> usize {
        self.signals.first().map(Vec::len).unwrap_or(0)
    }

    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        let j = self.signal_names.iter().position(|n| n == name)?;
        Some(&self.signals[j])
    }

    pub fn outcomes(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.outcomes
    }
}

/// Columns named `outcome_<name>` become outcomes, all others are signals.
pub fn parse_signal_table<R: Read>(reader: R) -> Result<SignalTable, PairsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| PairsError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| PairsError::Csv(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(PairsError::Csv(format!("row {row} has {} fields, expected {}", rec.len(), header.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| PairsError::BadValue {
                row,
                column: header[j].clone(),
                message: format!("not a number: {cell:?}"),
            })?;
            columns[j].push(value);
        }
    }
    let mut names = Vec::new();
    let mut signals = Vec::new();
    let mut outcomes = BTreeMap::new();
    for (name, col) in header.into_iter().zip(columns) {
        match name.strip_prefix(OUTCOME_PREFIX) {
            Some(outcome) => {
                if outcomes.insert(outcome.to_string(), col).is_some() {
                    return Err(PairsError::DuplicateColumn(name));
                }
            }
            None => {
                names.push(name);
                signals.push(col);
            }
        }
    }
    SignalTable::new(names, signals, outcomes)
}

pub fn load_signal_table(path: &Path) -> Result<SignalTable, PairsError> {
    let file = std::fs::File::open(path).map_err(|source| PairsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_signal_table(std::io::BufReader::new(file))
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, PairsError> {
    if x.len() != y.len() {
        return Err(PairsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(PairsError::TooFewRows(x.len()));
    }
    if is_constant(x) || is_constant(y) {
        return Err(PairsError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PairsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based mid-ranks.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = mid;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, PairsError> {
    if x.len() != y.len() {
        return Err(PairsError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&ranks(x), &ranks(y))
}

pub fn correlation(method: CorrelationMethod, x: &[f64], y: &[f64]) -> Result<f64, PairsError> {
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => spearman(x, y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub left: String,
    pub right: String,
    /// Keys `left_corr.<o>`, `right_corr.<o>`, `pair_corr.<o>` per outcome `o`.
    pub correlations: BTreeMap<String, f64>,
    pub coverage: f64,
    /// Correlation keys recorded as 0.0 because an input had zero variance.
    pub degenerate: Vec<String>,
}

impl PairCandidate {
    pub fn name(&self) -> String {
        pair_name(&self.left, &self.right)
    }

    /// Largest `|pair_corr.<o>|` over outcomes.
    pub fn importance(&self) -> f64 {
        self.correlations
            .iter()
            .filter(|(k, _)| k.starts_with("pair_corr."))
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }

    fn to_record(&self) -> FeatureRecord {
        let mut record = FeatureRecord::new(
            self.name(),
            format!("product of signals {} and {}", self.left, self.right),
        )
        .with_category(Category::Float)
        .with_number(COVERAGE_KEY, self.coverage)
        .with_number(IMPORTANCE_KEY, self.importance());
        for (k, v) in &self.correlations {
            record = record.with_number(k, *v);
        }
        if !self.degenerate.is_empty() {
            record = record.with_meta(DEGENERATE_KEY, MetaValue::Text(self.degenerate.join(";")));
        }
        record
    }
}

pub fn pair_name(left: &str, right: &str) -> String {
    format!("{left}{PAIR_SEPARATOR}{right}")
}

/// All `C(n, 2)` unordered pairs in lexicographic `(left, right)` order.
pub fn build_pair_pool(
    table: &SignalTable,
    method: CorrelationMethod,
) -> Result<(Vec<PairCandidate>, FeatureCatalog), PairsError> {
    let n = table.signal_names.len();
    if n < 2 {
        return Err(PairsError::TooFewSignals(n));
    }
    if table.n_rows() < 3 {
        return Err(PairsError::TooFewRows(table.n_rows()));
    }
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| table.signal_names[a].cmp(&table.signal_names[b]));

    let mut pool = Vec::with_capacity(n * (n - 1) / 2);
    for (ai, &a) in sorted.iter().enumerate() {
        for &b in &sorted[ai + 1..] {
            let (x, y) = (&table.signals[a], &table.signals[b]);
            let product: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
            let mut correlations = BTreeMap::new();
            let mut degenerate = Vec::new();
            for (outcome, target) in &table.outcomes {
                for (prefix, column) in [("left_corr", x), ("right_corr", y), ("pair_corr", &product)] {
                    let key = format!("{prefix}.{outcome}");
                    let value = match correlation(method, column, target) {
                        Ok(v) => v,
                        Err(PairsError::ZeroVariance) => {
                            degenerate.push(key.clone());
                            0.0
                        }
                        Err(e) => return Err(e),
                    };
                    correlations.insert(key, value);
                }
            }
            pool.push(PairCandidate {
                left: table.signal_names[a].clone(),
                right: table.signal_names[b].clone(),
                correlations,
                coverage: 1.0,
                degenerate,
            });
        }
    }
    let catalog = FeatureCatalog::new(pool.iter().map(PairCandidate::to_record).collect())?;
    Ok((pool, catalog))
}

/// `Σ a_s · s + Σ c_(s,t) · s·t` per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueModelSpec {
    pub linear_weights: BTreeMap<String, f64>,
    pub pair_weights: BTreeMap<(String, String), f64>,
}

pub fn eval_value_model(spec: &ValueModelSpec, table: &SignalTable) -> Result<Vec<f64>, PairsError> {
    let column = |name: &str| table.signal(name).ok_or_else(|| PairsError::UnknownSignal(name.to_string()));
    let linear: Vec<(&[f64], f64)> = spec
        .linear_weights
        .iter()
        .map(|(s, w)| Ok((column(s)?, *w)))
        .collect::<Result<_, PairsError>>()?;
    let pairs: Vec<(&[f64], &[f64], f64)> = spec
        .pair_weights
        .iter()
        .map(|((s, t), w)| Ok((column(s)?, column(t)?, *w)))
        .collect::<Result<_, PairsError>>()?;
    Ok((0..table.n_rows())
        .map(|i| {
            let mut score = 0.0;
            for (col, w) in &linear {
                score += w * col[i];
            }
            for (x, y, c) in &pairs {
                score += c * (x[i] * y[i]);
            }
            score
        })
        .collect())
}

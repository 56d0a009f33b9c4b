//! The feature universe and labelled tabular data.
//!
//! A [`FeatureCatalog`] is the ordered set of candidate features, each carrying a
//! free-text description plus open-ended quantitative metadata. A [`Dataset`] is
//! a dense matrix of feature values with a binary label per row. Both are
//! immutable once loaded and can be shared freely across worker threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CatalogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("non-binary label at data row {0}")]
    NonBinaryLabel(usize),
    #[error("ragged row at data row {0}: wrong number of fields")]
    RaggedRow(usize),
    #[error("non-finite or unparseable value at data row {row}, column {column:?}")]
    BadValue { row: usize, column: String },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CatalogError {
    CatalogError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Storage category of a feature in the serving model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Sparse,
    Dense,
    Float,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Sparse => "sparse",
            Category::Dense => "dense",
            Category::Float => "float",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(Category::Sparse),
            "dense" => Ok(Category::Dense),
            "float" => Ok(Category::Float),
            other => Err(format!("unknown category {other:?} (expected sparse, dense or float)")),
        }
    }
}

/// A metadata value: numeric where it parses as a number, text otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Number(f64),
    Text(String),
}

impl MetaValue {
    /// Numeric parse first, text fallback.
    pub fn parse(raw: &str) -> MetaValue {
        match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => MetaValue::Number(v),
            _ => MetaValue::Text(raw.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetaValue::Number(v) => Some(*v),
            MetaValue::Text(_) => None,
        }
    }
}

impl fmt::Display for MetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaValue::Number(v) => write!(f, "{v}"),
            MetaValue::Text(s) => f.write_str(s),
        }
    }
}

/// One candidate feature: name, description and auxiliary metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    /// Sorted by key so serialization is deterministic.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, MetaValue>,
}

impl FeatureRecord {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            group: None,
            category: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = Some(category);
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: MetaValue) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }

    pub fn with_number(self, key: impl Into<String>, value: f64) -> Self {
        self.with_meta(key, MetaValue::Number(value))
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).and_then(MetaValue::as_f64)
    }

    /// Group id, treating an empty string like a missing group.
    pub fn group_id(&self) -> Option<&str> {
        self.group.as_deref().filter(|g| !g.is_empty())
    }
}

/// Supported on-disk catalog encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogFormat {
    Jsonl,
    Csv,
}

impl CatalogFormat {
    /// Guess from the file extension; anything other than `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CatalogFormat::Csv,
            _ => CatalogFormat::Jsonl,
        }
    }
}

/// The ordered feature universe with a name index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    features: Vec<FeatureRecord>,
    index: HashMap<String, usize>,
}

impl FeatureCatalog {
    pub fn new(features: Vec<FeatureRecord>) -> Result<Self, CatalogError> {
        if features.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        let mut index = HashMap::with_capacity(features.len());
        for (i, record) in features.iter().enumerate() {
            if record.name.is_empty() {
                return Err(CatalogError::Parse {
                    line: i + 1,
                    message: "feature name must be non-empty".into(),
                });
            }
            if index.insert(record.name.clone(), i).is_some() {
                return Err(CatalogError::DuplicateName(record.name.clone()));
            }
        }
        Ok(Self { features, index })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureRecord] {
        &self.features
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.features.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureRecord> {
        self.position(name).map(|i| &self.features[i])
    }

    pub fn require(&self, name: &str) -> Result<&FeatureRecord, CatalogError> {
        self.get(name)
            .ok_or_else(|| CatalogError::UnknownFeature(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.features {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Load a catalog, preserving file order.
pub fn load_catalog(path: &Path, format: CatalogFormat) -> Result<FeatureCatalog, CatalogError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    match format {
        CatalogFormat::Jsonl => parse_catalog_jsonl(BufReader::new(file)),
        CatalogFormat::Csv => parse_catalog_csv(file),
    }
}

pub fn parse_catalog_jsonl<R: BufRead>(reader: R) -> Result<FeatureCatalog, CatalogError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CatalogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord =
            serde_json::from_str(&line).map_err(|e| CatalogError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.name.is_empty() {
            return Err(CatalogError::Parse {
                line: line_no,
                message: "feature name must be non-empty".into(),
            });
        }
        if !seen.insert(record.name.clone()) {
            return Err(CatalogError::DuplicateName(record.name));
        }
        records.push(record);
    }
    FeatureCatalog::new(records)
}

const CSV_FIXED: [&str; 4] = ["name", "description", "group", "category"];
const CSV_META_PREFIX: &str = "metadata.";

/// CSV catalogs: `name, description, group, category`, then `metadata.<key>` columns.
/// Empty cells mean "absent".
pub fn parse_catalog_csv<R: std::io::Read>(reader: R) -> Result<FeatureCatalog, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CatalogError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for (i, fixed) in CSV_FIXED.iter().enumerate() {
        if headers.get(i) != Some(*fixed) {
            return Err(CatalogError::MissingColumn((*fixed).to_string()));
        }
    }
    let mut meta_keys = Vec::new();
    for h in headers.iter().skip(CSV_FIXED.len()) {
        match h.strip_prefix(CSV_META_PREFIX) {
            Some(key) if !key.is_empty() => meta_keys.push(key.to_string()),
            _ => {
                return Err(CatalogError::Parse {
                    line: 1,
                    message: format!("unexpected column {h:?}; extra columns must be metadata.<key>"),
                })
            }
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line_no = i + 2;
        let row = row.map_err(|e| CatalogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let name = row.get(0).unwrap_or_default().to_string();
        if name.is_empty() {
            return Err(CatalogError::Parse {
                line: line_no,
                message: "feature name must be non-empty".into(),
            });
        }
        let mut record = FeatureRecord::new(name, row.get(1).unwrap_or_default());
        let group = row.get(2).unwrap_or_default();
        if !group.is_empty() {
            record.group = Some(group.to_string());
        }
        let category = row.get(3).unwrap_or_default();
        if !category.is_empty() {
            record.category = Some(category.parse().map_err(|message| CatalogError::Parse {
                line: line_no,
                message,
            })?);
        }
        for (key, raw) in meta_keys.iter().zip(row.iter().skip(CSV_FIXED.len())) {
            if !raw.is_empty() {
                record.metadata.insert(key.clone(), MetaValue::parse(raw));
            }
        }
        if !seen.insert(record.name.clone()) {
            return Err(CatalogError::DuplicateName(record.name));
        }
        records.push(record);
    }
    FeatureCatalog::new(records)
}

pub fn save_catalog(catalog: &FeatureCatalog, path: &Path) -> Result<(), CatalogError> {
    std::fs::write(path, catalog.to_jsonl()).map_err(|e| io_err(path, e))
}

/// Labelled tabular data: `rows[i][j]` is feature `feature_names[j]` of example `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self, CatalogError> {
        if rows.len() != labels.len() {
            return Err(CatalogError::RaggedRow(rows.len().min(labels.len()) + 1));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name) {
                return Err(CatalogError::DuplicateName(name.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != feature_names.len() {
                return Err(CatalogError::RaggedRow(i + 1));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(CatalogError::BadValue {
                    row: i + 1,
                    column: feature_names[j].clone(),
                });
            }
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(CatalogError::NonBinaryLabel(i + 1));
        }
        Ok(Self {
            feature_names,
            rows,
            labels,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Number of positive labels.
    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.labels.len()
    }

    /// Restrict and reorder columns to `names`; labels are untouched.
    pub fn project<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset, CatalogError> {
        let lookup: HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let columns = names
            .iter()
            .map(|n| {
                lookup
                    .get(n.as_ref())
                    .copied()
                    .ok_or_else(|| CatalogError::UnknownFeature(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|row| columns.iter().map(|&j| row[j]).collect())
            .collect();
        Dataset::new(
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            rows,
            self.labels.clone(),
        )
    }

    /// CSV text with the label as the last column. Floats use Rust's shortest
    /// round-trip representation so write-then-read is bit exact.
    pub fn to_csv_string(&self, label_column: &str) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        wtr.write_record(&header).expect("in-memory write");
        let mut fields = Vec::with_capacity(self.n_features() + 1);
        for (row, y) in self.rows.iter().zip(&self.labels) {
            fields.clear();
            fields.extend(row.iter().map(|v| format!("{v}")));
            fields.push(y.to_string());
            wtr.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<(), CatalogError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(self.to_csv_string(label_column).as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| io_err(path, e))
    }
}

/// Load a headed CSV; `label_column` becomes the labels, all other columns are
/// features in header order.
pub fn load_dataset(path: &Path, label_column: &str) -> Result<Dataset, CatalogError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_dataset_csv(BufReader::new(file), label_column)
}

pub fn parse_dataset_csv<R: std::io::Read>(
    reader: R,
    label_column: &str,
) -> Result<Dataset, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CatalogError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| CatalogError::MissingColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| CatalogError::Parse {
            line: row_no + 1,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(CatalogError::RaggedRow(row_no));
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                match field.trim() {
                    "0" => labels.push(0u8),
                    "1" => labels.push(1u8),
                    _ => return Err(CatalogError::NonBinaryLabel(row_no)),
                }
            } else {
                let v: f64 = field.trim().parse().map_err(|_| CatalogError::BadValue {
                    row: row_no,
                    column: headers[j].to_string(),
                })?;
                if !v.is_finite() {
                    return Err(CatalogError::BadValue {
                        row: row_no,
                        column: headers[j].to_string(),
                    });
                }
                row.push(v);
            }
        }
        rows.push(row);
    }
    Dataset::new(feature_names, rows, labels)
}

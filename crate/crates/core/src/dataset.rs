//! Feature tables, label vectors, partitions and z-score standardization.
//!
//! File formats are comma-delimited UTF-8 text with a header row:
//!
//! * features: `segment_id,<f1>,<f2>,...`
//! * labels: `segment_id,label` (an optional third `source` column is
//!   accepted and ignored; pseudo-labeling writes it)
//! * partitions: `segment_id,partition` with `train`, `devel` or `test`

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_error, csv_reader, fmt_f64, write_atomic};

pub const SEGMENT_ID_HEADER: &str = "segment_id";

/// Topic classes of the review-segment topic task, in index order.
pub const TOPIC_CLASSES: [&str; 10] = [
    "performance",
    "interior-features",
    "quality-aesthetic",
    "comfort",
    "handling",
    "safety",
    "general-information",
    "cost",
    "user-experience",
    "exterior-features",
];

/// Levels of the arousal and valence tasks.
pub const EMOTION_LEVELS: [&str; 3] = ["0", "1", "2"];

fn check_token(kind: &str, token: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::Validation(format!("empty {kind}")));
    }
    if token.contains([',', '\n', '\r', '"']) {
        return Err(Error::Validation(format!(
            "{kind} {token:?} contains a delimiter character"
        )));
    }
    Ok(())
}

/// Rejects empty ids and ids containing file delimiters.
pub fn validate_segment_id(id: &str) -> Result<()> {
    check_token("segment id", id)
}

fn check_unique<'a>(kind: &str, items: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.as_str()) {
            return Err(Error::Validation(format!("duplicate {kind} {item:?}")));
        }
    }
    Ok(())
}

/// Ordered list of distinct class names; a class index is its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Validation(format!(
                "a class vocabulary needs at least 2 classes, got {}",
                names.len()
            )));
        }
        for name in &names {
            check_token("class name", name)?;
        }
        check_unique("class name", &names)?;
        Ok(Self { names })
    }

    pub fn topic() -> Self {
        Self::new(TOPIC_CLASSES).expect("static vocabulary")
    }

    pub fn emotion_levels() -> Self {
        Self::new(EMOTION_LEVELS).expect("static vocabulary")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for ClassVocabulary {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<ClassVocabulary> for Vec<String> {
    fn from(v: ClassVocabulary) -> Self {
        v.names
    }
}

impl fmt::Display for ClassVocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.names.join(", "))
    }
}

/// Per-segment numeric feature matrix with named columns, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    segment_ids: Vec<String>,
    feature_names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(segment_ids: Vec<String>, feature_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != segment_ids.len() * feature_names.len() {
            return Err(Error::Validation(format!(
                "{} values do not fill a {}x{} table",
                values.len(),
                segment_ids.len(),
                feature_names.len()
            )));
        }
        for id in &segment_ids {
            validate_segment_id(id)?;
        }
        for name in &feature_names {
            check_token("feature name", name)?;
        }
        check_unique("segment id", &segment_ids)?;
        check_unique("feature name", &feature_names)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let d = feature_names.len();
            return Err(Error::Numeric(format!(
                "non-finite value in segment {:?}, feature {:?}",
                segment_ids[pos / d],
                feature_names[pos % d]
            )));
        }
        Ok(Self {
            segment_ids,
            feature_names,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column table has no row data
        let d = self.n_cols().max(1);
        self.values.chunks_exact(d).take(self.n_rows())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            segment_ids: indices.iter().map(|&i| self.segment_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values,
        }
    }

    pub fn select_columns(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.n_rows() * indices.len());
        for row in self.rows() {
            values.extend(indices.iter().map(|&j| row[j]));
        }
        Self {
            segment_ids: self.segment_ids.clone(),
            feature_names: indices.iter().map(|&j| self.feature_names[j].clone()).collect(),
            values,
        }
    }

    /// Appends the rows of `other`; column names must match in order and
    /// segment ids must stay unique.
    pub fn concat_rows(&self, other: &FeatureTable) -> Result<Self> {
        if self.feature_names != other.feature_names {
            return Err(Error::Validation(
                "cannot concatenate tables with different feature columns".into(),
            ));
        }
        let mut ids = self.segment_ids.clone();
        ids.extend(other.segment_ids.iter().cloned());
        check_unique("segment id", &ids)?;
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            segment_ids: ids,
            feature_names: self.feature_names.clone(),
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_feature_table(path)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(SEGMENT_ID_HEADER);
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (id, row) in self.segment_ids.iter().zip(self.rows()) {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

/// Reads a feature file, rejecting ragged rows, non-numeric or non-finite
/// cells and duplicate segment ids.
pub fn load_feature_table(path: &Path) -> Result<FeatureTable> {
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header row")),
    };
    if header.get(0) != Some(SEGMENT_ID_HEADER) {
        return Err(Error::parse(
            path,
            1,
            format!("first header cell must be `{SEGMENT_ID_HEADER}`"),
        ));
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    for name in &feature_names {
        check_token("feature name", name).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    }
    check_unique("feature name", &feature_names).map_err(|e| Error::parse(path, 1, e.to_string()))?;

    let d = feature_names.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != d + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} cells, found {}", d + 1, record.len()),
            ));
        }
        let id = &record[0];
        validate_segment_id(id).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !seen.insert(id.to_owned()) {
            return Err(Error::parse(path, line, format!("duplicate segment id {id:?}")));
        }
        for (cell, name) in record.iter().skip(1).zip(&feature_names) {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, line, format!("feature {name:?}: {cell:?} is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("feature {name:?}: non-finite value {cell:?}"),
                ));
            }
            values.push(v);
        }
        ids.push(id.to_owned());
    }
    Ok(FeatureTable {
        segment_ids: ids,
        feature_names,
        values,
    })
}

/// Per-segment class indices over a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    segment_ids: Vec<String>,
    labels: Vec<usize>,
    vocab: ClassVocabulary,
}

impl LabelVector {
    pub fn new(segment_ids: Vec<String>, labels: Vec<usize>, vocab: ClassVocabulary) -> Result<Self> {
        if segment_ids.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} segment ids but {} labels",
                segment_ids.len(),
                labels.len()
            )));
        }
        for id in &segment_ids {
            validate_segment_id(id)?;
        }
        check_unique("segment id", &segment_ids)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab.len()) {
            return Err(Error::Validation(format!(
                "label index {bad} out of range for {} classes",
                vocab.len()
            )));
        }
        Ok(Self {
            segment_ids,
            labels,
            vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn vocab(&self) -> &ClassVocabulary {
        &self.vocab
    }

    /// Number of samples per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            segment_ids: indices.iter().map(|&i| self.segment_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            vocab: self.vocab.clone(),
        }
    }

    pub fn concat(&self, other: &LabelVector) -> Result<Self> {
        if self.vocab != other.vocab {
            return Err(Error::Validation("cannot concatenate labels over different vocabularies".into()));
        }
        let mut ids = self.segment_ids.clone();
        ids.extend(other.segment_ids.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::new(ids, labels, self.vocab.clone())
    }

    pub fn load(path: &Path, vocab: &ClassVocabulary) -> Result<Self> {
        load_labels(path, vocab)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{SEGMENT_ID_HEADER},label\n");
        for (id, &l) in self.segment_ids.iter().zip(&self.labels) {
            out.push_str(id);
            out.push(',');
            out.push_str(self.vocab.name(l));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

/// Reads a `segment_id,label` file, mapping label names through `vocab`.
pub fn load_labels(path: &Path, vocab: &ClassVocabulary) -> Result<LabelVector> {
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header row")),
    };
    let width = header.len();
    let header_ok = header.get(0) == Some(SEGMENT_ID_HEADER)
        && header.get(1) == Some("label")
        && (width == 2 || (width == 3 && header.get(2) == Some("source")));
    if !header_ok {
        return Err(Error::parse(
            path,
            1,
            "label header must be `segment_id,label` (optionally followed by `source`)",
        ));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(Error::parse(
                path,
                line,
                format!("expected {width} cells, found {}", record.len()),
            ));
        }
        let id = &record[0];
        validate_segment_id(id).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !seen.insert(id.to_owned()) {
            return Err(Error::parse(path, line, format!("duplicate segment id {id:?}")));
        }
        let label = &record[1];
        let idx = vocab.index_of(label).ok_or_else(|| {
            Error::parse(path, line, format!("unknown class {label:?} (vocabulary {vocab})"))
        })?;
        ids.push(id.to_owned());
        labels.push(idx);
    }
    Ok(LabelVector {
        segment_ids: ids,
        labels,
        vocab: vocab.clone(),
    })
}

/// The optional `source` column of a label file, keyed by segment id.
/// Empty when the file has no such column.
pub fn load_label_sources(path: &Path) -> Result<HashMap<String, String>> {
    let mut reader = csv_reader(path)?;
    let mut sources = HashMap::new();
    let mut records = reader.records();
    match records.next() {
        Some(header) => {
            let header = header.map_err(|e| csv_error(path, e))?;
            if header.get(2) != Some("source") {
                return Ok(sources);
            }
        }
        None => return Ok(sources),
    }
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        if let (Some(id), Some(source)) = (record.get(0), record.get(2)) {
            sources.insert(id.to_owned(), source.to_owned());
        }
    }
    Ok(sources)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Devel,
    Test,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "devel" => Ok(Partition::Devel),
            "test" => Ok(Partition::Test),
            other => Err(Error::Validation(format!("unknown partition {other:?}"))),
        }
    }
}

/// Segment-to-partition assignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartitionMap {
    assignments: HashMap<String, Partition>,
}

impl PartitionMap {
    pub fn get(&self, id: &str) -> Option<Partition> {
        self.assignments.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Rows of `table` assigned to `partition`, in table order.
    pub fn rows_of(&self, table: &FeatureTable, partition: Partition) -> Vec<usize> {
        table
            .segment_ids()
            .iter()
            .enumerate()
            .filter(|(_, id)| self.get(id) == Some(partition))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn load_partitions(path: &Path) -> Result<PartitionMap> {
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header row")),
    };
    if header.len() != 2 || &header[0] != SEGMENT_ID_HEADER || &header[1] != "partition" {
        return Err(Error::parse(path, 1, "partition header must be `segment_id,partition`"));
    }
    let mut assignments = HashMap::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::parse(path, line, format!("expected 2 cells, found {}", record.len())));
        }
        let partition: Partition = record[1]
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        if assignments.insert(record[0].to_owned(), partition).is_some() {
            return Err(Error::parse(path, line, format!("duplicate segment id {:?}", &record[0])));
        }
    }
    Ok(PartitionMap { assignments })
}

/// Output of [`align`]: both sides restricted to shared segment ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Aligned {
    pub features: FeatureTable,
    pub labels: LabelVector,
    pub dropped_features: usize,
    pub dropped_labels: usize,
}

/// Restricts features and labels to their common segment ids, in feature
/// table order.
pub fn align(features: &FeatureTable, labels: &LabelVector) -> Result<Aligned> {
    let label_pos: HashMap<&str, usize> = labels
        .segment_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut feature_rows = Vec::new();
    let mut label_rows = Vec::new();
    for (i, id) in features.segment_ids().iter().enumerate() {
        if let Some(&j) = label_pos.get(id.as_str()) {
            feature_rows.push(i);
            label_rows.push(j);
        }
    }
    if feature_rows.is_empty() {
        return Err(Error::Validation(
            "features and labels share no segment ids".into(),
        ));
    }
    let dropped_features = features.n_rows() - feature_rows.len();
    let dropped_labels = labels.len() - label_rows.len();
    if dropped_features > 0 || dropped_labels > 0 {
        log::warn!(
            "alignment dropped {dropped_features} feature rows and {dropped_labels} label rows"
        );
    }
    Ok(Aligned {
        features: features.select_rows(&feature_rows),
        labels: labels.select(&label_rows),
        dropped_features,
        dropped_labels,
    })
}

/// Per-column z-score parameters fitted on a training table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

impl Standardizer {
    /// Fits per-column means and population standard deviations. Constant
    /// columns get std 1 so they map to exact zeros.
    pub fn fit(train: &FeatureTable) -> Result<Self> {
        let n = train.n_rows();
        if n == 0 {
            return Err(Error::Validation("cannot fit a standardizer on an empty table".into()));
        }
        let d = train.n_cols();
        let mut means = Vec::with_capacity(d);
        let mut std_devs = Vec::with_capacity(d);
        for j in 0..d {
            let col = train.column(j);
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                means.push(first);
                std_devs.push(1.0);
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if !(mean.is_finite() && var.is_finite()) {
                return Err(Error::Numeric(format!(
                    "feature {:?} overflows while standardizing",
                    train.feature_names()[j]
                )));
            }
            let std = var.sqrt();
            means.push(mean);
            std_devs.push(if std > 0.0 { std } else { 1.0 });
        }
        Ok(Self { means, std_devs })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.n_cols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: table.n_cols(),
            });
        }
        let d = self.dim();
        let values = table
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let j = k % d;
                (v - self.means[j]) / self.std_devs[j]
            })
            .collect();
        FeatureTable::new(table.segment_ids().to_vec(), table.feature_names().to_vec(), values)
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.std_devs))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }
}

pub fn fit_standardizer(train: &FeatureTable) -> Result<Standardizer> {
    Standardizer::fit(train)
}

pub fn apply_standardizer(s: &Standardizer, t: &FeatureTable) -> Result<FeatureTable> {
    s.apply(t)
}

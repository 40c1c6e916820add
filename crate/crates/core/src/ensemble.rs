//! Weighted soft voting over probability files, and threshold-gated
//! pseudo-labeling.
//!
//! Probability files are `segment_id,<class1>,...,<classK>` with the class
//! columns in vocabulary order. Each row must be a distribution: entries
//! non-negative and summing to 1 within [`LOAD_SUM_TOLERANCE`]; rows inside
//! the tolerance are renormalized on load.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::argmax;
use crate::dataset::{validate_segment_id, ClassVocabulary, FeatureTable, LabelVector, SEGMENT_ID_HEADER};
use crate::error::{Error, Result};
use crate::io::{csv_error, csv_reader, fmt_f64, write_atomic};

pub const LOAD_SUM_TOLERANCE: f64 = 1e-3;

/// Tolerance on row sums for matrices built in memory.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-segment class distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMatrix {
    segment_ids: Vec<String>,
    vocab: ClassVocabulary,
    /// Row-major `N x K`.
    probs: Vec<f64>,
}

fn normalize_row(row: &mut [f64], tolerance: f64) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("invalid probability {v}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(format!("row sums to {sum}, not 1"));
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

impl ProbabilityMatrix {
    /// Builds a matrix from distribution rows, renormalizing each exactly.
    pub fn from_rows(segment_ids: Vec<String>, vocab: ClassVocabulary, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != segment_ids.len() {
            return Err(Error::Validation(format!(
                "{} segment ids but {} probability rows",
                segment_ids.len(),
                rows.len()
            )));
        }
        let k = vocab.len();
        let mut probs = Vec::with_capacity(rows.len() * k);
        for (id, mut row) in segment_ids.iter().zip(rows) {
            if row.len() != k {
                return Err(Error::Validation(format!(
                    "segment {id:?}: {} probabilities for {k} classes",
                    row.len()
                )));
            }
            normalize_row(&mut row, ROW_SUM_TOLERANCE)
                .map_err(|e| Error::Validation(format!("segment {id:?}: {e}")))?;
            probs.extend(row);
        }
        Self::checked(segment_ids, vocab, probs)
    }

    fn checked(segment_ids: Vec<String>, vocab: ClassVocabulary, probs: Vec<f64>) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in &segment_ids {
            validate_segment_id(id)?;
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate segment id {id:?}")));
            }
        }
        Ok(Self {
            segment_ids,
            vocab,
            probs,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn vocab(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_classes();
        &self.probs[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.n_classes())
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn reorder(&self, ids: &[String]) -> Result<Self> {
        let pos: HashMap<&str, usize> = self
            .segment_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut probs = Vec::with_capacity(ids.len() * self.n_classes());
        for id in ids {
            let &i = pos
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("no probabilities for segment {id:?}")))?;
            probs.extend_from_slice(self.row(i));
        }
        Self::checked(ids.to_vec(), self.vocab.clone(), probs)
    }

    pub fn load(path: &Path, vocab: &ClassVocabulary) -> Result<Self> {
        load_probabilities(path, vocab)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(SEGMENT_ID_HEADER);
        for name in self.vocab.names() {
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

/// Reads and validates a probability file whose class columns must match
/// `vocab` in order.
pub fn load_probabilities(path: &Path, vocab: &ClassVocabulary) -> Result<ProbabilityMatrix> {
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header row")),
    };
    let header_ok = header.get(0) == Some(SEGMENT_ID_HEADER)
        && header.len() == vocab.len() + 1
        && header.iter().skip(1).zip(vocab.names()).all(|(a, b)| a == b);
    if !header_ok {
        return Err(Error::parse(
            path,
            1,
            format!("header must be `{SEGMENT_ID_HEADER},{}`", vocab.names().join(",")),
        ));
    }
    let k = vocab.len();
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != k + 1 {
            return Err(Error::parse(path, line, format!("expected {} cells, found {}", k + 1, record.len())));
        }
        let id = &record[0];
        validate_segment_id(id).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !seen.insert(id.to_owned()) {
            return Err(Error::parse(path, line, format!("duplicate segment id {id:?}")));
        }
        let mut row = Vec::with_capacity(k);
        for cell in record.iter().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, line, format!("{cell:?} is not a number")))?;
            row.push(v);
        }
        normalize_row(&mut row, LOAD_SUM_TOLERANCE).map_err(|e| Error::parse(path, line, e))?;
        ids.push(id.to_owned());
        probs.extend(row);
    }
    Ok(ProbabilityMatrix {
        segment_ids: ids,
        vocab: vocab.clone(),
        probs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub weights: Vec<f64>,
}

impl Default for EnsembleConfig {
    /// Equal weighting of two models.
    fn default() -> Self {
        Self { weights: vec![0.5, 0.5] }
    }
}

/// Weighted sum of input rows, renormalized to a distribution. Inputs are
/// matched by segment id and follow the order of the first input.
pub fn soft_vote(inputs: &[ProbabilityMatrix], cfg: &EnsembleConfig) -> Result<ProbabilityMatrix> {
    let Some(first) = inputs.first() else {
        return Err(Error::Validation("soft voting needs at least one input".into()));
    };
    if cfg.weights.len() != inputs.len() {
        return Err(Error::Config(format!(
            "{} weights for {} probability inputs",
            cfg.weights.len(),
            inputs.len()
        )));
    }
    if let Some(w) = cfg.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Config(format!("ensemble weights must be positive, got {w}")));
    }
    let mut aligned = Vec::with_capacity(inputs.len());
    for (m, p) in inputs.iter().enumerate() {
        if p.vocab != first.vocab {
            return Err(Error::Validation(format!(
                "input {m} has classes {}, expected {}",
                p.vocab, first.vocab
            )));
        }
        if p.segment_ids == first.segment_ids {
            aligned.push(std::borrow::Cow::Borrowed(p));
        } else if p.n_rows() == first.n_rows() {
            aligned.push(std::borrow::Cow::Owned(p.reorder(&first.segment_ids)?));
        } else {
            return Err(Error::Validation(format!(
                "input {m} has {} segments, input 0 has {}",
                p.n_rows(),
                first.n_rows()
            )));
        }
    }
    let k = first.n_classes();
    let mut probs = vec![0.0; first.probs.len()];
    for (p, &w) in aligned.iter().zip(&cfg.weights) {
        for (acc, v) in probs.iter_mut().zip(&p.probs) {
            *acc += w * v;
        }
    }
    for row in probs.chunks_exact_mut(k) {
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(ProbabilityMatrix {
        segment_ids: first.segment_ids.clone(),
        vocab: first.vocab.clone(),
        probs,
    })
}

/// Row-wise argmax, lowest class index on ties.
pub fn predict_from_probs(p: &ProbabilityMatrix) -> LabelVector {
    let labels = p.rows().map(argmax).collect();
    LabelVector::new(p.segment_ids.clone(), labels, p.vocab.clone()).expect("matrix invariants hold")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub confidence_threshold: f64,
    pub max_rounds: usize,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.9,
            max_rounds: 1,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let tau = self.confidence_threshold;
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("confidence threshold must be in (0, 1], got {tau}")));
        }
        if tau <= 1.0 / n_classes as f64 {
            return Err(Error::Config(format!(
                "confidence threshold {tau} does not exceed 1/{n_classes}; every segment would qualify"
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

/// What one pseudo-labeling round added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelReport {
    pub round: usize,
    pub segments_added: usize,
    pub per_class: Vec<usize>,
    pub added_ids: Vec<String>,
}

pub const PSEUDO_REPORT_HEADER: &str = "round,segments_added,class,count";

/// Renders reports as `round,segments_added,class,count`, one row per class.
pub fn pseudo_report_csv(reports: &[PseudoLabelReport], vocab: &ClassVocabulary) -> String {
    let mut out = String::from(PSEUDO_REPORT_HEADER);
    out.push('\n');
    for r in reports {
        for (c, count) in r.per_class.iter().enumerate() {
            out.push_str(&format!("{},{},{},{count}\n", r.round, r.segments_added, vocab.name(c)));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelRound {
    pub features: FeatureTable,
    pub labels: LabelVector,
    pub report: PseudoLabelReport,
}

/// Appends every unlabeled segment whose top probability reaches the
/// threshold, labelled with its argmax class.
///
/// `scores` must cover exactly the unlabeled segments (any order), and no
/// unlabeled segment may already be in the training set.
pub fn pseudo_label_round(
    train_x: &FeatureTable,
    train_y: &LabelVector,
    unlabeled_x: &FeatureTable,
    scores: &ProbabilityMatrix,
    cfg: &PseudoLabelConfig,
    round: usize,
) -> Result<PseudoLabelRound> {
    cfg.validate(train_y.vocab().len())?;
    if train_x.segment_ids() != train_y.segment_ids() {
        return Err(Error::Validation("training features and labels are not aligned".into()));
    }
    if scores.vocab() != train_y.vocab() {
        return Err(Error::Validation("score classes differ from training classes".into()));
    }
    let train_ids: HashSet<&str> = train_x.segment_ids().iter().map(String::as_str).collect();
    if let Some(id) = unlabeled_x.segment_ids().iter().find(|id| train_ids.contains(id.as_str())) {
        return Err(Error::Validation(format!(
            "unlabeled segment {id:?} is already in the training set"
        )));
    }
    if scores.n_rows() != unlabeled_x.n_rows() {
        return Err(Error::Validation(format!(
            "{} score rows for {} unlabeled segments",
            scores.n_rows(),
            unlabeled_x.n_rows()
        )));
    }
    let scores = scores.reorder(unlabeled_x.segment_ids())?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut per_class = vec![0usize; train_y.vocab().len()];
    for (i, p) in scores.rows().enumerate() {
        let c = argmax(p);
        if p[c] >= cfg.confidence_threshold {
            rows.push(i);
            labels.push(c);
            per_class[c] += 1;
        }
    }
    let added = unlabeled_x.select_rows(&rows);
    let added_y = LabelVector::new(added.segment_ids().to_vec(), labels, train_y.vocab().clone())?;
    Ok(PseudoLabelRound {
        features: train_x.concat_rows(&added)?,
        labels: train_y.concat(&added_y)?,
        report: PseudoLabelReport {
            round,
            segments_added: rows.len(),
            per_class,
            added_ids: added.segment_ids().to_vec(),
        },
    })
}

/// Outcome of [`self_train`].
#[derive(Clone, Debug, PartialEq)]
pub struct SelfTraining {
    pub features: FeatureTable,
    pub labels: LabelVector,
    pub reports: Vec<PseudoLabelReport>,
}

/// Repeats score → pseudo-label → retrain for up to `max_rounds` rounds.
///
/// `score` receives the current training set and the remaining pool and
/// returns probabilities for the pool. Added segments leave the pool, so no
/// segment is labelled twice. Stops early when a round adds nothing.
pub fn self_train<F>(
    train_x: &FeatureTable,
    train_y: &LabelVector,
    unlabeled_x: &FeatureTable,
    cfg: &PseudoLabelConfig,
    mut score: F,
) -> Result<SelfTraining>
where
    F: FnMut(&FeatureTable, &LabelVector, &FeatureTable) -> Result<ProbabilityMatrix>,
{
    cfg.validate(train_y.vocab().len())?;
    let mut x = train_x.clone();
    let mut y = train_y.clone();
    let mut pool = unlabeled_x.clone();
    let mut reports = Vec::new();
    for round in 1..=cfg.max_rounds {
        if pool.n_rows() == 0 {
            break;
        }
        let scores = score(&x, &y, &pool)?;
        let step = pseudo_label_round(&x, &y, &pool, &scores, cfg, round)?;
        let added: HashSet<&str> = step.report.added_ids.iter().map(String::as_str).collect();
        let keep: Vec<usize> = (0..pool.n_rows())
            .filter(|&i| !added.contains(pool.segment_ids()[i].as_str()))
            .collect();
        pool = pool.select_rows(&keep);
        let done = step.report.segments_added == 0;
        x = step.features;
        y = step.labels;
        reports.push(step.report);
        if done {
            break;
        }
    }
    Ok(SelfTraining {
        features: x,
        labels: y,
        reports,
    })
}

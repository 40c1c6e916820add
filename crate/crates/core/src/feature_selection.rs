//! Univariate feature ranking by the one-way ANOVA F statistic.
//!
//! For a column `x` and the `g` classes present in the labels,
//!
//! ```text
//! F = (SSB / (g - 1)) / (SSW / (N - g))
//! SSB = sum_c n_c (mean_c - mean)^2
//! SSW = sum_c sum_{i in c} (x_i - mean_c)^2
//! ```
//!
//! A column with no between-class spread scores 0. A column whose classes are
//! internally constant but differ from each other scores [`F_SENTINEL`]
//! instead of infinity, so exported score files stay parseable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTable, LabelVector};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::par;

/// Score assigned to perfectly class-separated columns (zero within-class
/// variance, non-zero between-class variance).
pub const F_SENTINEL: f64 = 1e12;

/// Sums of squares below this fraction of the total are rounding residue.
const RELATIVE_ZERO: f64 = 1e-13;

pub const SCORE_EXPORT_HEADER: &str = "feature_index,feature_name,f_score,selected";

/// How many features to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionMode {
    TopK { k: usize },
    /// Keep `floor(D * percent / 100)` features, at least one.
    Percentile { percent: f64 },
}

impl SelectionMode {
    pub fn resolve_k(&self, n_features: usize) -> Result<usize> {
        match *self {
            SelectionMode::TopK { k } => Ok(k),
            SelectionMode::Percentile { percent } => {
                if !(percent > 0.0 && percent <= 100.0) {
                    return Err(Error::Config(format!(
                        "selection percentile must be in (0, 100], got {percent}"
                    )));
                }
                let k = (n_features as f64 * percent / 100.0 + 1e-9).floor() as usize;
                Ok(k.clamp(1, n_features.max(1)))
            }
        }
    }
}

/// Per-feature F-scores and the retained-feature mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub feature_names: Vec<String>,
    pub f_scores: Vec<f64>,
    pub selected: Vec<bool>,
    pub k: usize,
}

impl SelectionReport {
    /// Indices of retained columns in original column order.
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.selected_indices()
            .into_iter()
            .map(|i| self.feature_names[i].clone())
            .collect()
    }

    /// Column indices ordered by decreasing score, lower index first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        rank_by_score(&self.f_scores)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(SCORE_EXPORT_HEADER);
        out.push('\n');
        for (i, ((name, score), sel)) in self
            .feature_names
            .iter()
            .zip(&self.f_scores)
            .zip(&self.selected)
            .enumerate()
        {
            out.push_str(&format!("{i},{name},{},{sel}\n", fmt_f64(*score)));
        }
        out
    }
}

/// Class-wise statistics of one column.
struct GroupStats {
    ssb: f64,
    ssw: f64,
}

fn column_stats(col: &[f64], labels: &[usize], classes: &[usize], counts: &[usize]) -> GroupStats {
    let n = col.len() as f64;
    let k = counts.len();
    let mut sums = vec![0.0; k];
    for (&x, &l) in col.iter().zip(labels) {
        sums[l] += x;
    }
    let grand = col.iter().sum::<f64>() / n;
    let mut means = vec![0.0; k];
    let mut ssb = 0.0;
    for &c in classes {
        means[c] = sums[c] / counts[c] as f64;
        ssb += counts[c] as f64 * (means[c] - grand).powi(2);
    }
    let ssw = col
        .iter()
        .zip(labels)
        .map(|(&x, &l)| (x - means[l]).powi(2))
        .sum::<f64>();
    GroupStats { ssb, ssw }
}

fn f_from_stats(col: &[f64], stats: &GroupStats, g: usize) -> f64 {
    let first = col[0];
    if col.iter().all(|&v| v == first) {
        return 0.0;
    }
    let total = stats.ssb + stats.ssw;
    if stats.ssb <= RELATIVE_ZERO * total {
        return 0.0;
    }
    if stats.ssw <= RELATIVE_ZERO * total {
        return F_SENTINEL;
    }
    let n = col.len();
    let between = stats.ssb / (g - 1) as f64;
    let within = stats.ssw / (n - g) as f64;
    (between / within).min(F_SENTINEL)
}

/// One-way ANOVA F statistic of every feature column against the labels.
///
/// Classes with no samples are left out of the group count `g` with a
/// warning. Inputs must already be aligned row for row.
pub fn anova_f_scores(features: &FeatureTable, labels: &LabelVector) -> Result<Vec<f64>> {
    let n = features.n_rows();
    if labels.len() != n {
        return Err(Error::Validation(format!(
            "{} feature rows but {} labels",
            n,
            labels.len()
        )));
    }
    if features.segment_ids() != labels.segment_ids() {
        return Err(Error::Validation("features and labels are not aligned".into()));
    }
    let counts = labels.class_counts();
    let classes: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    let g = classes.len();
    if g < 2 {
        return Err(Error::Validation(format!(
            "ANOVA needs at least 2 classes present, found {g}"
        )));
    }
    if n <= g {
        return Err(Error::Validation(format!(
            "ANOVA needs more samples ({n}) than classes present ({g})"
        )));
    }
    if g < counts.len() {
        let absent: Vec<&str> = (0..counts.len())
            .filter(|&c| counts[c] == 0)
            .map(|c| labels.vocab().name(c))
            .collect();
        log::warn!("classes absent from scoring data: {}", absent.join(", "));
    }
    let y = labels.labels();
    Ok(par::map_range(features.n_cols(), |j| {
        let col = features.column(j);
        let stats = column_stats(&col, y, &classes, &counts);
        f_from_stats(&col, &stats, g)
    }))
}

fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps lower indices first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Builds a report from precomputed scores, keeping the `k` best.
pub fn report_from_scores(feature_names: Vec<String>, f_scores: Vec<f64>, k: usize) -> Result<SelectionReport> {
    let d = f_scores.len();
    if feature_names.len() != d {
        return Err(Error::Validation("feature names and scores differ in length".into()));
    }
    if k == 0 || k > d {
        return Err(Error::Config(format!(
            "number of selected features must be in 1..={d}, got {k}"
        )));
    }
    let mut selected = vec![false; d];
    for &j in rank_by_score(&f_scores).iter().take(k) {
        selected[j] = true;
    }
    Ok(SelectionReport {
        feature_names,
        f_scores,
        selected,
        k,
    })
}

/// Scores all features and retains the `k` with the highest F statistic.
pub fn select_top_k(features: &FeatureTable, labels: &LabelVector, k: usize) -> Result<SelectionReport> {
    let d = features.n_cols();
    if k == 0 || k > d {
        return Err(Error::Config(format!(
            "number of selected features must be in 1..={d}, got {k}"
        )));
    }
    let scores = anova_f_scores(features, labels)?;
    report_from_scores(features.feature_names().to_vec(), scores, k)
}

pub fn select(features: &FeatureTable, labels: &LabelVector, mode: SelectionMode) -> Result<SelectionReport> {
    let k = mode.resolve_k(features.n_cols())?;
    select_top_k(features, labels, k)
}

/// Restricts `table` to the report's retained columns.
pub fn apply_selection(report: &SelectionReport, table: &FeatureTable) -> Result<FeatureTable> {
    if table.feature_names() != report.feature_names.as_slice() {
        let detail = table
            .feature_names()
            .iter()
            .zip(&report.feature_names)
            .position(|(a, b)| a != b)
            .map(|j| {
                format!(
                    "column {j} is {:?}, expected {:?}",
                    table.feature_names()[j],
                    report.feature_names[j]
                )
            })
            .unwrap_or_else(|| {
                format!(
                    "{} columns, expected {}",
                    table.n_cols(),
                    report.feature_names.len()
                )
            });
        return Err(Error::Validation(format!("feature columns do not match selection: {detail}")));
    }
    Ok(table.select_columns(&report.selected_indices()))
}

/// Writes `feature_index,feature_name,f_score,selected` rows for plotting.
pub fn export_scores(report: &SelectionReport, path: &Path) -> Result<()> {
    write_atomic(path, report.to_csv_string().as_bytes())
}

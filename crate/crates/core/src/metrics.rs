//! Confusion matrices and the micro-F1 / macro-F1 / UAR family of scores.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassVocabulary, LabelVector};
use crate::error::{Error, Result};

/// Default `(w_f1, w_uar)` for the combined score. A reporting convention,
/// not something the scores themselves imply.
pub const DEFAULT_COMBINED_WEIGHTS: (f64, f64) = (0.66, 0.34);

/// Rows are reference classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub vocab: ClassVocabulary,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(vocab: ClassVocabulary) -> Self {
        let k = vocab.len();
        Self {
            vocab,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|c| self.counts[c][c]).sum()
    }

    /// K×K table with class-name headers; the first column names the
    /// reference class.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("reference");
        for name in self.vocab.names() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.vocab.names().iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies reference against prediction. Both vectors must cover the same
/// segment ids; order may differ.
pub fn confusion(reference: &LabelVector, predicted: &LabelVector) -> Result<ConfusionMatrix> {
    if reference.vocab() != predicted.vocab() {
        return Err(Error::Validation("reference and predictions use different classes".into()));
    }
    let mut cm = ConfusionMatrix::zeros(reference.vocab().clone());
    if reference.is_empty() && predicted.is_empty() {
        return Ok(cm);
    }
    let (refs, preds): (Vec<usize>, Vec<usize>) = if reference.segment_ids() == predicted.segment_ids() {
        (reference.labels().to_vec(), predicted.labels().to_vec())
    } else {
        if reference.len() != predicted.len() {
            return Err(Error::Validation(format!(
                "{} reference labels but {} predictions",
                reference.len(),
                predicted.len()
            )));
        }
        let order: std::collections::HashMap<&str, usize> = predicted
            .segment_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut preds = Vec::with_capacity(reference.len());
        for id in reference.segment_ids() {
            let &i = order
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("no prediction for segment {id:?}")))?;
            preds.push(predicted.labels()[i]);
        }
        (reference.labels().to_vec(), preds)
    };
    for (r, p) in refs.into_iter().zip(preds) {
        cm.counts[r][p] += 1;
    }
    Ok(cm)
}

/// Confusion over the segments the two vectors share, in reference order.
pub fn confusion_on_overlap(reference: &LabelVector, predicted: &LabelVector) -> Result<ConfusionMatrix> {
    let predicted_ids: std::collections::HashSet<&str> =
        predicted.segment_ids().iter().map(String::as_str).collect();
    let shared: Vec<usize> = (0..reference.len())
        .filter(|&i| predicted_ids.contains(reference.segment_ids()[i].as_str()))
        .collect();
    if shared.is_empty() {
        return Err(Error::Validation("predictions and labels share no segment ids".into()));
    }
    let reference = reference.select(&shared);
    let pos: std::collections::HashMap<&str, usize> = predicted
        .segment_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let rows: Vec<usize> = reference.segment_ids().iter().map(|id| pos[id.as_str()]).collect();
    confusion(&reference, &predicted.select(&rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub uar: f64,
    pub combined: f64,
    pub combined_weights: (f64, f64),
    pub per_class_recall: Vec<Option<f64>>,
    pub per_class_precision: Vec<Option<f64>>,
    pub per_class_f1: Vec<Option<f64>>,
    pub excluded_classes: Vec<String>,
    pub total: u64,
}

pub const SCORES_HEADER: &str = "metric,value";

impl ScoreReport {
    /// `metric,value` rows.
    pub fn to_csv_string(&self) -> String {
        format!(
            "{SCORES_HEADER}\nmicro_f1,{:?}\nmacro_f1,{:?}\nuar,{:?}\ncombined,{:?}\nw_f1,{:?}\nw_uar,{:?}\nsegments,{}\n",
            self.micro_f1,
            self.macro_f1,
            self.uar,
            self.combined,
            self.combined_weights.0,
            self.combined_weights.1,
            self.total
        )
    }

    pub fn to_text(&self, vocab: &ClassVocabulary) -> String {
        let mut out = String::new();
        out.push_str(&format!("segments scored : {}\n", self.total));
        out.push_str(&format!("micro-F1 (acc.) : {:.4}\n", self.micro_f1));
        out.push_str(&format!("macro-F1        : {:.4}\n", self.macro_f1));
        out.push_str(&format!("UAR             : {:.4}\n", self.uar));
        out.push_str(&format!(
            "combined        : {:.4}  ({} * micro-F1 + {} * UAR)\n",
            self.combined, self.combined_weights.0, self.combined_weights.1
        ));
        out.push_str("class                 recall  precision  f1\n");
        for (c, name) in vocab.names().iter().enumerate() {
            let fmt = |v: Option<f64>| v.map_or("   -   ".to_string(), |x| format!("{x:.4}"));
            out.push_str(&format!(
                "{name:<20}  {}  {}     {}\n",
                fmt(self.per_class_recall[c]),
                fmt(self.per_class_precision[c]),
                fmt(self.per_class_f1[c])
            ));
        }
        if !self.excluded_classes.is_empty() {
            out.push_str(&format!(
                "excluded from macro averages (no reference segments): {}\n",
                self.excluded_classes.join(", ")
            ));
        }
        out
    }
}

/// Scores a confusion matrix. Classes without reference segments are left
/// out of the macro-F1 and UAR averages.
pub fn score(cm: &ConfusionMatrix, combined_weights: (f64, f64)) -> Result<ScoreReport> {
    let (w_f1, w_uar) = combined_weights;
    if !(w_f1 >= 0.0 && w_uar >= 0.0 && ((w_f1 + w_uar) - 1.0).abs() < 1e-9) {
        return Err(Error::Config(format!(
            "combined weights must be non-negative and sum to 1, got ({w_f1}, {w_uar})"
        )));
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("cannot score an empty confusion matrix".into()));
    }
    let k = cm.counts.len();
    let row_totals: Vec<u64> = cm.counts.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<u64> = (0..k).map(|c| cm.counts.iter().map(|r| r[c]).sum()).collect();
    let mut recall = vec![None; k];
    let mut precision = vec![None; k];
    let mut f1 = vec![None; k];
    let mut excluded = Vec::new();
    for c in 0..k {
        let tp = cm.counts[c][c] as f64;
        let p = if col_totals[c] > 0 { tp / col_totals[c] as f64 } else { 0.0 };
        if col_totals[c] > 0 {
            precision[c] = Some(p);
        }
        if row_totals[c] == 0 {
            excluded.push(cm.vocab.name(c).to_string());
            continue;
        }
        let r = tp / row_totals[c] as f64;
        recall[c] = Some(r);
        f1[c] = Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    if !excluded.is_empty() {
        log::warn!("classes with no reference segments excluded from averages: {}", excluded.join(", "));
    }
    let mean = |v: &[Option<f64>]| {
        let included: Vec<f64> = v.iter().flatten().copied().collect();
        included.iter().sum::<f64>() / included.len() as f64
    };
    let micro_f1 = cm.trace() as f64 / total as f64;
    let uar = mean(&recall);
    let macro_f1 = mean(&f1);
    Ok(ScoreReport {
        micro_f1,
        macro_f1,
        uar,
        combined: w_f1 * micro_f1 + w_uar * uar,
        combined_weights,
        per_class_recall: recall,
        per_class_precision: precision,
        per_class_f1: f1,
        excluded_classes: excluded,
        total,
    })
}

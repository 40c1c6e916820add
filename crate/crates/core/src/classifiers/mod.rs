//! The three per-feature-set classifiers: RBF C-SVC (SMO), random forest
//! of CART trees, and k-nearest neighbours.

pub mod forest;
pub mod knn;
pub mod svm;

pub use forest::{forest_train, DecisionTree, FeaturesPerSplit, ForestConfig, ForestModel};
pub use knn::{knn_train, KnnConfig, KnnModel};
pub use svm::{svm_decision, svm_train, BinarySvmModel, GammaMode, SvmConfig, SvmModel};

use crate::dataset::{ClassVocabulary, FeatureTable, LabelVector};
use crate::ensemble::ProbabilityMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Common prediction surface of trained models.
pub trait Classifier: Sync {
    fn n_features(&self) -> usize;

    fn n_classes(&self) -> usize;

    /// Predicted class index for one feature vector of length `n_features`.
    fn predict_row(&self, x: &[f64]) -> usize;

    /// Class distribution for one feature vector; sums to 1.
    fn scores_row(&self, x: &[f64]) -> Vec<f64>;

    fn check_dim(&self, table: &FeatureTable) -> Result<()> {
        if table.n_cols() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: table.n_cols(),
            });
        }
        Ok(())
    }

    fn predict(&self, table: &FeatureTable) -> Result<Vec<usize>> {
        self.check_dim(table)?;
        Ok(par::map_range(table.n_rows(), |i| self.predict_row(table.row(i))))
    }

    fn scores(&self, table: &FeatureTable) -> Result<Vec<Vec<f64>>> {
        self.check_dim(table)?;
        Ok(par::map_range(table.n_rows(), |i| self.scores_row(table.row(i))))
    }
}

/// Runs `model` over `table`, labelling the output with `vocab`.
pub fn predict_labels<C: Classifier + ?Sized>(
    model: &C,
    table: &FeatureTable,
    vocab: &ClassVocabulary,
) -> Result<LabelVector> {
    check_vocab(model, vocab)?;
    let labels = model.predict(table)?;
    LabelVector::new(table.segment_ids().to_vec(), labels, vocab.clone())
}

pub fn predict_scores<C: Classifier + ?Sized>(
    model: &C,
    table: &FeatureTable,
    vocab: &ClassVocabulary,
) -> Result<ProbabilityMatrix> {
    check_vocab(model, vocab)?;
    let rows = model.scores(table)?;
    ProbabilityMatrix::from_rows(table.segment_ids().to_vec(), vocab.clone(), rows)
}

fn check_vocab<C: Classifier + ?Sized>(model: &C, vocab: &ClassVocabulary) -> Result<()> {
    if vocab.len() != model.n_classes() {
        return Err(Error::Validation(format!(
            "model has {} classes, vocabulary has {}",
            model.n_classes(),
            vocab.len()
        )));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest count; ties go to the lowest index.
pub fn argmax_count<T: Copy + PartialOrd>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_training_inputs(x: &FeatureTable, y: &LabelVector) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Validation(format!(
            "{} feature rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if x.segment_ids() != y.segment_ids() {
        return Err(Error::Validation("features and labels are not aligned".into()));
    }
    if x.n_rows() == 0 {
        return Err(Error::Validation("empty training set".into()));
    }
    Ok(())
}

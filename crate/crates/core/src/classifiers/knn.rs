use serde::{Deserialize, Serialize};

use super::{argmax_count, check_training_inputs, Classifier};
use crate::dataset::{FeatureTable, LabelVector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k_neighbors: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k_neighbors: 5 }
    }
}

/// Euclidean k-nearest-neighbour classifier; keeps the whole training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub config: KnnConfig,
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major training matrix.
    pub train: Vec<f64>,
    pub labels: Vec<usize>,
}

impl KnnModel {
    fn sample(&self, i: usize) -> &[f64] {
        &self.train[i * self.dim..(i + 1) * self.dim]
    }

    /// Training rows of the `k` nearest neighbours, nearest first; equal
    /// distances keep the lower row index first.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = (0..self.labels.len())
            .map(|i| {
                let d2: f64 = self.sample(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let k = self.config.k_neighbors;
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, order);
            dist.truncate(k);
        }
        dist.sort_by(order);
        dist.into_iter().map(|(_, i)| i).collect()
    }

    fn neighbor_counts(&self, x: &[f64]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for i in self.neighbors(x) {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

impl Classifier for KnnModel {
    fn n_features(&self) -> usize {
        self.dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_row(&self, x: &[f64]) -> usize {
        argmax_count(&self.neighbor_counts(x))
    }

    fn scores_row(&self, x: &[f64]) -> Vec<f64> {
        let k = self.config.k_neighbors as f64;
        self.neighbor_counts(x).into_iter().map(|c| c as f64 / k).collect()
    }
}

pub fn knn_train(x: &FeatureTable, y: &LabelVector, cfg: &KnnConfig) -> Result<KnnModel> {
    check_training_inputs(x, y)?;
    if cfg.k_neighbors == 0 || cfg.k_neighbors > x.n_rows() {
        return Err(Error::Config(format!(
            "k_neighbors must be in 1..={}, got {}",
            x.n_rows(),
            cfg.k_neighbors
        )));
    }
    Ok(KnnModel {
        config: cfg.clone(),
        n_classes: y.vocab().len(),
        dim: x.n_cols(),
        train: x.values().to_vec(),
        labels: y.labels().to_vec(),
    })
}

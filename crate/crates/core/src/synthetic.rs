//! Seeded Gaussian-blob classification tasks for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassVocabulary, FeatureTable, LabelVector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub dims: usize,
    /// Columns carrying class signal; the rest are pure noise.
    pub informative: usize,
    /// Standard deviation of class centres along informative columns, in
    /// units of the unit within-class noise.
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            n_train: 600,
            n_test: 200,
            dims: 500,
            informative: 20,
            separation: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub train_x: FeatureTable,
    pub train_y: LabelVector,
    pub test_x: FeatureTable,
    pub test_y: LabelVector,
    /// Column indices of the informative features.
    pub informative_columns: Vec<usize>,
}

/// Class vocabulary `"0".."K-1"`.
pub fn numeric_vocab(k: usize) -> Result<ClassVocabulary> {
    ClassVocabulary::new((0..k).map(|c| c.to_string()))
}

/// Draws class centres on randomly placed informative columns and samples
/// every point as centre + N(0, 1) noise; labels are uniform over classes.
pub fn gaussian_blobs(spec: &BlobSpec) -> Result<SyntheticTask> {
    if spec.informative > spec.dims || spec.dims == 0 {
        return Err(Error::Config("need 0 < dims and informative <= dims".into()));
    }
    let vocab = numeric_vocab(spec.n_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centre_dist =
        Normal::new(0.0, spec.separation).map_err(|e| Error::Config(format!("separation: {e}")))?;
    let mut columns: Vec<usize> = (0..spec.dims).collect();
    columns.shuffle(&mut rng);
    let mut informative_columns = columns[..spec.informative].to_vec();
    informative_columns.sort_unstable();
    let centres: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let mut c = vec![0.0; spec.dims];
            for &j in &informative_columns {
                c[j] = centre_dist.sample(&mut rng);
            }
            c
        })
        .collect();
    let names: Vec<String> = (0..spec.dims).map(|j| format!("f{j:04}")).collect();
    let mut split = |prefix: &str, n: usize| -> Result<(FeatureTable, LabelVector)> {
        let ids: Vec<String> = (0..n).map(|i| format!("{prefix}{i:05}")).collect();
        let mut labels = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * spec.dims);
        for _ in 0..n {
            let c = rng.gen_range(0..spec.n_classes);
            labels.push(c);
            for v in &centres[c] {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values.push(v + noise);
            }
        }
        Ok((
            FeatureTable::new(ids.clone(), names.clone(), values)?,
            LabelVector::new(ids, labels, vocab.clone())?,
        ))
    };
    let (train_x, train_y) = split("train_", spec.n_train)?;
    let (test_x, test_y) = split("test_", spec.n_test)?;
    Ok(SyntheticTask {
        train_x,
        train_y,
        test_x,
        test_y,
        informative_columns,
    })
}

//! Random forest of depth-limited CART trees with Gini splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_count, check_training_inputs, Classifier};
use crate::dataset::{FeatureTable, LabelVector};
use crate::error::{Error, Result};
use crate::par;

/// Depth reported by the hyperparameter search for the valence runs; the
/// effective depth is its floor.
pub const DEFAULT_MAX_DEPTH: f64 = 7.4008;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(&self, d: usize) -> usize {
        let m = match *self {
            FeaturesPerSplit::Sqrt => (d as f64).sqrt().floor() as usize,
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Count(k) => k.min(d),
        };
        m.max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Configured depth as given; may be fractional.
    pub max_depth: f64,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: DEFAULT_MAX_DEPTH,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn effective_max_depth(&self) -> usize {
        self.max_depth.floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_depth.is_finite() && self.max_depth >= 1.0) {
            return Err(Error::Config(format!("max_depth must be at least 1, got {}", self.max_depth)));
        }
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if self.features_per_split == FeaturesPerSplit::Count(0) {
            return Err(Error::Config("features_per_split must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Per-class counts of the bootstrap samples reaching the leaf.
    Leaf { counts: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax_count(self.leaf_counts(x))
    }

    /// Longest root-to-leaf path, counted in splits.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { counts } => Some(counts.as_slice()),
            Node::Split { .. } => None,
        })
    }
}

struct TreeBuilder<'a> {
    x: &'a FeatureTable,
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_samples_split: usize,
    features_per_split: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn counts(&self, samples: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in samples {
            counts[self.y[i]] += 1;
        }
        counts
    }

    fn build(&mut self, samples: &[usize], depth: usize) -> usize {
        let counts = self.counts(samples);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || samples.len() < self.min_samples_split {
            return self.push_leaf(counts);
        }
        let Some(split) = self.best_split(samples) else {
            return self.push_leaf(counts);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.x.row(i)[split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: Vec::new() });
        let l = self.build(&left, depth + 1);
        let r = self.build(&right, depth + 1);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        at
    }

    fn push_leaf(&mut self, counts: Vec<u32>) -> usize {
        self.nodes.push(Node::Leaf { counts });
        self.nodes.len() - 1
    }

    /// Draws features in random order until `features_per_split` of them
    /// have been found non-constant on this node, keeping the split with the
    /// lowest weighted Gini impurity (first found on ties).
    fn best_split(&mut self, samples: &[usize]) -> Option<BestSplit> {
        let mut features: Vec<usize> = (0..self.x.n_cols()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<BestSplit> = None;
        let mut evaluated = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for f in features {
            if evaluated >= self.features_per_split {
                break;
            }
            pairs.clear();
            pairs.extend(samples.iter().map(|&i| (self.x.row(i)[f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            evaluated += 1;
            if let Some(candidate) = self.scan_feature(f, &pairs) {
                if best.as_ref().map_or(true, |b| candidate.score < b.score) {
                    best = Some(candidate);
                }
            }
        }
        best
    }

    fn scan_feature(&self, feature: usize, sorted: &[(f64, usize)]) -> Option<BestSplit> {
        let n = sorted.len();
        let mut right = vec![0usize; self.n_classes];
        for &(_, c) in sorted {
            right[c] += 1;
        }
        let mut left = vec![0usize; self.n_classes];
        let mut best: Option<BestSplit> = None;
        for p in 0..n - 1 {
            let c = sorted[p].1;
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (sorted[p].0, sorted[p + 1].0);
            if v == next {
                continue;
            }
            let n_left = (p + 1) as f64;
            let n_right = (n - p - 1) as f64;
            let sq = |counts: &[usize]| counts.iter().map(|&k| (k * k) as f64).sum::<f64>();
            // n * weighted Gini = n - sum_l c^2 / n_l - sum_r c^2 / n_r
            let score = n as f64 - sq(&left) / n_left - sq(&right) / n_right;
            if best.as_ref().map_or(true, |b| score < b.score) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid < next { mid } else { v };
                best = Some(BestSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }
}

fn grow_tree(x: &FeatureTable, y: &[usize], n_classes: usize, cfg: &ForestConfig, tree_index: usize) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(tree_index as u64);
    let n = x.n_rows();
    let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut builder = TreeBuilder {
        x,
        y,
        n_classes,
        max_depth: cfg.effective_max_depth(),
        min_samples_split: cfg.min_samples_split,
        features_per_split: cfg.features_per_split.resolve(x.n_cols()),
        rng,
        nodes: Vec::new(),
    };
    builder.build(&sample, 0);
    DecisionTree { nodes: builder.nodes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub effective_max_depth: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub trees: Vec<DecisionTree>,
}

impl ForestModel {
    pub fn tree_votes(&self, x: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(x)] += 1;
        }
        votes
    }
}

impl Classifier for ForestModel {
    fn n_features(&self) -> usize {
        self.dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Plurality of per-tree majority classes, lowest index on ties.
    fn predict_row(&self, x: &[f64]) -> usize {
        argmax_count(&self.tree_votes(x))
    }

    /// Mean over trees of the leaf class frequencies.
    fn scores_row(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            let counts = t.leaf_counts(x);
            let total: u32 = counts.iter().sum();
            for (a, &c) in acc.iter_mut().zip(counts) {
                *a += c as f64 / total as f64;
            }
        }
        let n = self.trees.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        acc
    }
}

/// Grows `n_trees` trees on seeded bootstrap resamples.
///
/// Tree `t` draws from ChaCha8 stream `t` of the configured seed, so the
/// forest is identical however the trees are scheduled.
pub fn forest_train(x: &FeatureTable, y: &LabelVector, cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    check_training_inputs(x, y)?;
    if x.n_cols() == 0 {
        return Err(Error::Validation("forest training needs at least one feature".into()));
    }
    let n_classes = y.vocab().len();
    let trees = par::map_range(cfg.n_trees, |t| grow_tree(x, y.labels(), n_classes, cfg, t));
    Ok(ForestModel {
        config: cfg.clone(),
        effective_max_depth: cfg.effective_max_depth(),
        n_classes,
        dim: x.n_cols(),
        trees,
    })
}

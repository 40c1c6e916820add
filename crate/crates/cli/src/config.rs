//! Declarative run configuration (TOML).
//!
//! ```toml
//! task = "arousal"            # topic | arousal | valence
//! seed = 7
//! output_dir = "runs/arousal"
//!
//! [data]
//! train_features = "vggface_train.csv"
//! train_labels = "arousal_train.csv"
//! devel_features = "vggface_devel.csv"
//! devel_labels = "arousal_devel.csv"
//!
//! [selection]
//! mode = "top_k"
//! k = 256
//!
//! [svm]
//! c = 0.0538
//! gamma = "auto"
//! ```
//!
//! Exactly one of `[svm]`, `[forest]`, `[knn]` or `[ensemble]` must be
//! present. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use segclass_core::classifiers::{FeaturesPerSplit, ForestConfig, GammaMode, KnnConfig, SvmConfig};
use segclass_core::dataset::{
    align, load_feature_table, load_labels, load_partitions, ClassVocabulary, FeatureTable, LabelVector, Partition,
};
use segclass_core::ensemble::{EnsembleConfig, PseudoLabelConfig};
use segclass_core::feature_selection::SelectionMode;
use segclass_core::metrics::DEFAULT_COMBINED_WEIGHTS;
use segclass_core::pipeline::{ClassifierConfig, PipelineSpec};
use segclass_core::{Error, Result};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Topic,
    Arousal,
    Valence,
}

impl Task {
    pub fn default_vocab(self) -> ClassVocabulary {
        match self {
            Task::Topic => ClassVocabulary::topic(),
            Task::Arousal | Task::Valence => ClassVocabulary::emotion_levels(),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topic" => Ok(Task::Topic),
            "arousal" => Ok(Task::Arousal),
            "valence" => Ok(Task::Valence),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_features: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub devel_features: Option<PathBuf>,
    pub devel_labels: Option<PathBuf>,
    pub test_features: Option<PathBuf>,
    pub unlabeled_features: Option<PathBuf>,
    /// Single-table layout: all segments in one file, split by `partitions`.
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub partitions: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub mode: String,
    pub k: Option<usize>,
    pub percent: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum GammaValue {
    Named(String),
    Value(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSection {
    pub c: Option<f64>,
    pub gamma: Option<GammaValue>,
    pub tolerance: Option<f64>,
    pub max_passes: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum FeaturesValue {
    Named(String),
    Count(usize),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: Option<usize>,
    pub max_depth: Option<f64>,
    pub min_samples_split: Option<usize>,
    pub features_per_split: Option<FeaturesValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnSection {
    pub k_neighbors: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub probability_files: Vec<PathBuf>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelSection {
    pub threshold: Option<f64>,
    pub max_rounds: Option<usize>,
    /// Probability file for the unlabeled segments.
    pub scores: Option<PathBuf>,
    /// Model used to score the unlabeled segments when `scores` is absent.
    pub model: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub combined_weights: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub task: Task,
    pub classes: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub standardize: Option<bool>,
    #[serde(default)]
    pub data: DataSection,
    pub selection: Option<SelectionSection>,
    pub svm: Option<SvmSection>,
    pub forest: Option<ForestSection>,
    pub knn: Option<KnnSection>,
    pub ensemble: Option<EnsembleSection>,
    pub pseudo_label: Option<PseudoLabelSection>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// What the run trains or combines.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Classifier(ClassifierConfig),
    Ensemble {
        files: Vec<PathBuf>,
        config: EnsembleConfig,
    },
}

/// Validated configuration with absolute paths.
#[derive(Debug)]
pub struct RunConfig {
    pub task: Task,
    pub vocab: ClassVocabulary,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub standardize: Option<bool>,
    pub data: DataSection,
    pub selection: Option<SelectionMode>,
    pub method: Method,
    pub pseudo_label: Option<(PseudoLabelConfig, Option<PathBuf>, Option<PathBuf>)>,
    pub combined_weights: (f64, f64),
}

fn resolve(base: &Path, p: &Option<PathBuf>) -> Option<PathBuf> {
    p.as_ref().map(|p| if p.is_absolute() { p.clone() } else { base.join(p) })
}

fn require_exists(p: &Option<PathBuf>) -> Result<()> {
    if let Some(path) = p {
        if !path.exists() {
            return Err(Error::Config(format!("file not found: {}", path.display())));
        }
    }
    Ok(())
}

fn parse_selection(s: &SelectionSection) -> Result<Option<SelectionMode>> {
    match s.mode.as_str() {
        "none" => Ok(None),
        "top_k" => {
            let k = s.k.ok_or_else(|| Error::Config("selection mode top_k needs `k`".into()))?;
            if k == 0 {
                return Err(Error::Config("selection k must be positive".into()));
            }
            Ok(Some(SelectionMode::TopK { k }))
        }
        "percentile" => {
            let percent = s
                .percent
                .ok_or_else(|| Error::Config("selection mode percentile needs `percent`".into()))?;
            Ok(Some(SelectionMode::Percentile { percent }))
        }
        other => Err(Error::Config(format!(
            "unknown selection mode {other:?} (expected none, top_k or percentile)"
        ))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let raw: RawConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_raw(raw, &base)
    }

    pub fn from_raw(raw: RawConfig, base: &Path) -> Result<Self> {
        let vocab = match &raw.classes {
            Some(names) => ClassVocabulary::new(names.clone()).map_err(|e| Error::Config(e.to_string()))?,
            None => raw.task.default_vocab(),
        };
        let expected_k = raw.task.default_vocab().len();
        if vocab.len() != expected_k {
            return Err(Error::Config(format!(
                "task {:?} has {expected_k} classes, config lists {}",
                raw.task,
                vocab.len()
            )));
        }
        let d = &raw.data;
        let data = DataSection {
            train_features: resolve(base, &d.train_features),
            train_labels: resolve(base, &d.train_labels),
            devel_features: resolve(base, &d.devel_features),
            devel_labels: resolve(base, &d.devel_labels),
            test_features: resolve(base, &d.test_features),
            unlabeled_features: resolve(base, &d.unlabeled_features),
            features: resolve(base, &d.features),
            labels: resolve(base, &d.labels),
            partitions: resolve(base, &d.partitions),
        };
        for p in [
            &data.train_features,
            &data.train_labels,
            &data.devel_features,
            &data.devel_labels,
            &data.test_features,
            &data.unlabeled_features,
            &data.features,
            &data.labels,
            &data.partitions,
        ] {
            require_exists(p)?;
        }
        let single = data.features.is_some() || data.partitions.is_some();
        let split = data.train_features.is_some() || data.train_labels.is_some();
        if single && split {
            return Err(Error::Config(
                "use either per-partition files or features + labels + partitions, not both".into(),
            ));
        }
        if single && (data.features.is_none() || data.labels.is_none() || data.partitions.is_none()) {
            return Err(Error::Config("single-table layout needs features, labels and partitions".into()));
        }

        let selection = match &raw.selection {
            Some(s) => parse_selection(s)?,
            None => None,
        };

        let mut methods = Vec::new();
        if let Some(s) = &raw.svm {
            let mut cfg = SvmConfig::default();
            if let Some(c) = s.c {
                cfg.c = c;
            }
            if let Some(g) = &s.gamma {
                cfg.gamma = match g {
                    GammaValue::Named(n) if n == "auto" => GammaMode::Auto,
                    GammaValue::Named(n) if n == "scale" => GammaMode::Scale,
                    GammaValue::Named(n) => {
                        return Err(Error::Config(format!("unknown gamma {n:?} (auto, scale or a number)")))
                    }
                    GammaValue::Value(v) => GammaMode::Explicit(*v),
                };
            }
            if let Some(t) = s.tolerance {
                cfg.tolerance = t;
            }
            if let Some(m) = s.max_passes {
                cfg.max_passes = m;
            }
            cfg.validate()?;
            methods.push(Method::Classifier(ClassifierConfig::Svm(cfg)));
        }
        if let Some(f) = &raw.forest {
            let mut cfg = ForestConfig {
                seed: raw.seed,
                ..ForestConfig::default()
            };
            if let Some(n) = f.n_trees {
                cfg.n_trees = n;
            }
            if let Some(dpt) = f.max_depth {
                cfg.max_depth = dpt;
            }
            if let Some(m) = f.min_samples_split {
                cfg.min_samples_split = m;
            }
            if let Some(fs) = &f.features_per_split {
                cfg.features_per_split = match fs {
                    FeaturesValue::Named(n) if n == "sqrt" => FeaturesPerSplit::Sqrt,
                    FeaturesValue::Named(n) if n == "all" => FeaturesPerSplit::All,
                    FeaturesValue::Named(n) => {
                        return Err(Error::Config(format!(
                            "unknown features_per_split {n:?} (sqrt, all or a count)"
                        )))
                    }
                    FeaturesValue::Count(k) => FeaturesPerSplit::Count(*k),
                };
            }
            cfg.validate()?;
            methods.push(Method::Classifier(ClassifierConfig::Forest(cfg)));
        }
        if let Some(k) = &raw.knn {
            let cfg = KnnConfig {
                k_neighbors: k.k_neighbors.unwrap_or(KnnConfig::default().k_neighbors),
            };
            if cfg.k_neighbors == 0 {
                return Err(Error::Config("k_neighbors must be positive".into()));
            }
            methods.push(Method::Classifier(ClassifierConfig::Knn(cfg)));
        }
        if let Some(e) = &raw.ensemble {
            let files: Vec<PathBuf> = e.probability_files.iter().map(|p| resolve(base, &Some(p.clone())).unwrap()).collect();
            if files.is_empty() {
                return Err(Error::Config("ensemble needs at least one probability file".into()));
            }
            for f in &files {
                require_exists(&Some(f.clone()))?;
            }
            let weights = e.weights.clone().unwrap_or_else(|| {
                if files.len() == 2 {
                    EnsembleConfig::default().weights
                } else {
                    vec![1.0 / files.len() as f64; files.len()]
                }
            });
            if weights.len() != files.len() {
                return Err(Error::Config(format!(
                    "{} ensemble weights for {} probability files",
                    weights.len(),
                    files.len()
                )));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::Config("ensemble weights must be positive".into()));
            }
            methods.push(Method::Ensemble {
                files,
                config: EnsembleConfig { weights },
            });
        }
        if methods.len() != 1 {
            return Err(Error::Config(format!(
                "exactly one of [svm], [forest], [knn] or [ensemble] is required, found {}",
                methods.len()
            )));
        }
        let method = methods.pop().unwrap();

        let pseudo_label = match &raw.pseudo_label {
            Some(p) => {
                let cfg = PseudoLabelConfig {
                    confidence_threshold: p.threshold.unwrap_or(PseudoLabelConfig::default().confidence_threshold),
                    max_rounds: p.max_rounds.unwrap_or(PseudoLabelConfig::default().max_rounds),
                };
                cfg.validate(vocab.len())?;
                let scores = resolve(base, &p.scores);
                let model = resolve(base, &p.model);
                require_exists(&scores)?;
                require_exists(&model)?;
                Some((cfg, scores, model))
            }
            None => None,
        };

        let combined_weights = match raw.evaluation.combined_weights {
            Some([a, b]) => (a, b),
            None => DEFAULT_COMBINED_WEIGHTS,
        };

        Ok(Self {
            task: raw.task,
            vocab,
            seed: raw.seed,
            output_dir: resolve(base, &raw.output_dir).unwrap_or_else(|| base.join("out")),
            standardize: raw.standardize,
            data,
            selection,
            method,
            pseudo_label,
            combined_weights,
        })
    }

    /// Replaces the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Method::Classifier(ClassifierConfig::Forest(cfg)) = &mut self.method {
            cfg.seed = seed;
        }
    }

    pub fn classifier(&self) -> Result<&ClassifierConfig> {
        match &self.method {
            Method::Classifier(c) => Ok(c),
            Method::Ensemble { .. } => Err(Error::Config("this command needs a classifier section".into())),
        }
    }

    pub fn pipeline_spec(&self) -> Result<PipelineSpec> {
        let classifier = self.classifier()?.clone();
        let mut spec = PipelineSpec::new(self.selection, classifier);
        if let Some(s) = self.standardize {
            spec.standardize = s;
        }
        Ok(spec)
    }

    /// Aligned features and labels of a labelled partition.
    pub fn labelled(&self, partition: Partition) -> Result<Option<(FeatureTable, LabelVector)>> {
        let d = &self.data;
        if let (Some(f), Some(l), Some(p)) = (&d.features, &d.labels, &d.partitions) {
            let table = load_feature_table(f)?;
            let parts = load_partitions(p)?;
            let rows = parts.rows_of(&table, partition);
            if rows.is_empty() {
                return Ok(None);
            }
            let labels = load_labels(l, &self.vocab)?;
            let a = align(&table.select_rows(&rows), &labels)?;
            return Ok(Some((a.features, a.labels)));
        }
        let (f, l) = match partition {
            Partition::Train => (&d.train_features, &d.train_labels),
            Partition::Devel => (&d.devel_features, &d.devel_labels),
            Partition::Test => return Ok(None),
        };
        match (f, l) {
            (Some(f), Some(l)) => {
                let a = align(&load_feature_table(f)?, &load_labels(l, &self.vocab)?)?;
                Ok(Some((a.features, a.labels)))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Config(format!("{partition:?} partition needs both features and labels"))),
        }
    }

    pub fn train(&self) -> Result<(FeatureTable, LabelVector)> {
        self.labelled(Partition::Train)?
            .ok_or_else(|| Error::Config("no training partition configured".into()))
    }
}

//! Standardize → select → train, persisted as one self-contained model file.
//!
//! The model file is JSON with a top-level `model_type` (`svm`, `forest` or
//! `knn`) and `format_version`, the class vocabulary, the expected input
//! columns, the fitted standardizer and selection mask, the classifier
//! configuration, and every learned parameter. Floats are written in
//! shortest round-trip form, so a loaded model predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{
    forest_train, knn_train, predict_labels, predict_scores, svm_train, Classifier, ForestConfig, ForestModel,
    KnnConfig, KnnModel, SvmConfig, SvmModel,
};
use crate::dataset::{ClassVocabulary, FeatureTable, LabelVector, Standardizer};
use crate::ensemble::ProbabilityMatrix;
use crate::error::{Error, Result, StageContext};
use crate::feature_selection::{apply_selection, select, SelectionMode, SelectionReport};
use crate::io::write_atomic;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", content = "config", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Svm(SvmConfig),
    Forest(ForestConfig),
    Knn(KnnConfig),
}

impl ClassifierConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierConfig::Svm(_) => "svm",
            ClassifierConfig::Forest(_) => "forest",
            ClassifierConfig::Knn(_) => "knn",
        }
    }

    /// Distance-based classifiers get z-scored inputs; trees do not need them.
    pub fn standardizes_by_default(&self) -> bool {
        !matches!(self, ClassifierConfig::Forest(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", content = "model", rename_all = "snake_case")]
pub enum TrainedClassifier {
    Svm(SvmModel),
    Forest(ForestModel),
    Knn(KnnModel),
}

impl TrainedClassifier {
    pub fn as_classifier(&self) -> &dyn Classifier {
        match self {
            TrainedClassifier::Svm(m) => m,
            TrainedClassifier::Forest(m) => m,
            TrainedClassifier::Knn(m) => m,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainedClassifier::Svm(_) => "svm",
            TrainedClassifier::Forest(_) => "forest",
            TrainedClassifier::Knn(_) => "knn",
        }
    }
}

/// Training recipe for [`train_pipeline`].
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSpec {
    pub standardize: bool,
    pub selection: Option<SelectionMode>,
    pub classifier: ClassifierConfig,
}

impl PipelineSpec {
    pub fn new(selection: Option<SelectionMode>, classifier: ClassifierConfig) -> Self {
        Self {
            standardize: classifier.standardizes_by_default(),
            selection,
            classifier,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub format_version: u32,
    pub classes: ClassVocabulary,
    /// Column names the model expects, in order.
    pub input_features: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub selection: Option<SelectionReport>,
    #[serde(flatten)]
    pub classifier: TrainedClassifier,
}

impl PipelineModel {
    pub fn model_type(&self) -> &'static str {
        self.classifier.name()
    }

    /// Checks the input schema and applies the embedded preprocessing.
    pub fn prepare(&self, table: &FeatureTable) -> Result<FeatureTable> {
        let names = table.feature_names();
        if names != self.input_features.as_slice() {
            let expected: std::collections::HashSet<&str> =
                self.input_features.iter().map(String::as_str).collect();
            if let Some(unknown) = names.iter().find(|n| !expected.contains(n.as_str())) {
                return Err(Error::Validation(format!("unknown feature column {unknown:?}")));
            }
            let present: std::collections::HashSet<&str> = names.iter().map(String::as_str).collect();
            if let Some(missing) = self.input_features.iter().find(|n| !present.contains(n.as_str())) {
                return Err(Error::Validation(format!("missing feature column {missing:?}")));
            }
            return Err(Error::Validation(
                "feature columns are not in the order the model was trained with".into(),
            ));
        }
        let mut t = table.clone();
        if let Some(s) = &self.standardizer {
            t = s.apply(&t)?;
        }
        if let Some(r) = &self.selection {
            t = apply_selection(r, &t)?;
        }
        Ok(t)
    }

    pub fn predict(&self, table: &FeatureTable) -> Result<LabelVector> {
        let t = self.prepare(table)?;
        predict_labels(self.classifier.as_classifier(), &t, &self.classes)
    }

    pub fn scores(&self, table: &FeatureTable) -> Result<ProbabilityMatrix> {
        let t = self.prepare(table)?;
        predict_scores(self.classifier.as_classifier(), &t, &self.classes)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Model(format!(
                    "unsupported model format version {v} (expected {MODEL_FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Model("missing format_version".into())),
        }
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let c = self.classifier.as_classifier();
        if c.n_classes() != self.classes.len() {
            return Err(Error::Model("classifier and vocabulary disagree on class count".into()));
        }
        let mut width = self.input_features.len();
        if let Some(s) = &self.standardizer {
            if s.dim() != width {
                return Err(Error::Model("standardizer width does not match input columns".into()));
            }
        }
        if let Some(r) = &self.selection {
            if r.feature_names != self.input_features {
                return Err(Error::Model("selection report does not match input columns".into()));
            }
            width = r.selected.iter().filter(|&&s| s).count();
        }
        if c.n_features() != width {
            return Err(Error::Model(format!(
                "classifier expects {} features, preprocessing yields {width}",
                c.n_features()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Standardize (optional) → ANOVA selection (optional) → classifier.
pub fn train_pipeline(x: &FeatureTable, y: &LabelVector, spec: &PipelineSpec) -> Result<PipelineModel> {
    if x.segment_ids() != y.segment_ids() {
        return Err(Error::Validation("training features and labels are not aligned".into())).stage("train");
    }
    let mut current = x.clone();
    let standardizer = if spec.standardize {
        let s = Standardizer::fit(&current).stage("standardize")?;
        current = s.apply(&current).stage("standardize")?;
        Some(s)
    } else {
        None
    };
    let selection = match spec.selection {
        Some(mode) => {
            let report = select(&current, y, mode).stage("select")?;
            current = apply_selection(&report, &current).stage("select")?;
            Some(report)
        }
        None => None,
    };
    let classifier = match &spec.classifier {
        ClassifierConfig::Svm(cfg) => TrainedClassifier::Svm(svm_train(&current, y, cfg).stage("train")?),
        ClassifierConfig::Forest(cfg) => TrainedClassifier::Forest(forest_train(&current, y, cfg).stage("train")?),
        ClassifierConfig::Knn(cfg) => TrainedClassifier::Knn(knn_train(&current, y, cfg).stage("train")?),
    };
    Ok(PipelineModel {
        format_version: MODEL_FORMAT_VERSION,
        classes: y.vocab().clone(),
        input_features: x.feature_names().to_vec(),
        standardizer,
        selection,
        classifier,
    })
}

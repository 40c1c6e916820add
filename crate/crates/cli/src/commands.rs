use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use segclass_core::dataset::{load_feature_table, load_label_sources, load_labels, FeatureTable, LabelVector, Partition};
use segclass_core::ensemble::{
    load_probabilities, predict_from_probs, pseudo_label_round, pseudo_report_csv, soft_vote,
};
use segclass_core::feature_selection::select;
use segclass_core::io::write_all_atomic;
use segclass_core::metrics::{confusion, score};
use segclass_core::pipeline::{train_pipeline, PipelineModel};
use segclass_core::synthetic::{gaussian_blobs, BlobSpec};
use segclass_core::{Error, Result};

use crate::config::{Method, RunConfig};

type Outputs = Vec<(PathBuf, Vec<u8>)>;

fn out(dir: &Path, name: &str, body: String) -> (PathBuf, Vec<u8>) {
    (dir.join(name), body.into_bytes())
}

fn finish(files: Outputs) -> Result<()> {
    write_all_atomic(&files)?;
    for (p, _) in &files {
        info!("wrote {}", p.display());
    }
    Ok(())
}

pub fn run_select(cfg: &RunConfig) -> Result<()> {
    let mode = cfg
        .selection
        .ok_or_else(|| Error::Config("select needs a [selection] section with mode top_k or percentile".into()))?;
    let (x, y) = cfg.train()?;
    let report = select(&x, &y, mode)?;
    info!("selected {} of {} features", report.k, x.n_cols());
    finish(vec![out(&cfg.output_dir, "selection_scores.csv", report.to_csv_string())])
}

fn prediction_files(dir: &Path, prefix: &str, model: &PipelineModel, x: &FeatureTable) -> Result<Outputs> {
    let probs = model.scores(x)?;
    let labels = model.predict(x)?;
    Ok(vec![
        out(dir, &format!("{prefix}predictions.csv"), labels.to_csv_string()),
        out(dir, &format!("{prefix}probabilities.csv"), probs.to_csv_string()),
    ])
}

pub fn run_train(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.pipeline_spec()?;
    let (x, y) = cfg.train()?;
    info!(
        "{:?}: training {} on {} segments x {} features",
        cfg.task,
        spec.classifier.name(),
        x.n_rows(),
        x.n_cols()
    );
    let model = train_pipeline(&x, &y, &spec)?;
    let dir = &cfg.output_dir;
    let mut files = vec![out(dir, "model.json", model.to_json()?)];
    if let Some(report) = &model.selection {
        files.push(out(dir, "selection_scores.csv", report.to_csv_string()));
    }
    if let Some((dx, dy)) = cfg.labelled(Partition::Devel)? {
        files.extend(prediction_files(dir, "devel_", &model, &dx)?);
        let predicted = model.predict(&dx)?;
        let report = score(&confusion(&dy, &predicted)?, cfg.combined_weights)?;
        info!("devel micro-F1 {:.4}, UAR {:.4}", report.micro_f1, report.uar);
        files.push(out(dir, "devel_scores.csv", report.to_csv_string()));
    }
    if let Some(path) = &cfg.data.test_features {
        files.extend(prediction_files(dir, "test_", &model, &load_feature_table(path)?)?);
    }
    finish(files)
}

fn default_features(cfg: &RunConfig) -> Result<PathBuf> {
    let d = &cfg.data;
    d.test_features
        .clone()
        .or_else(|| d.devel_features.clone())
        .ok_or_else(|| Error::Config("no --features given and no test or devel features configured".into()))
}

pub fn run_predict(cfg: &RunConfig, model: Option<&Path>, features: Option<&Path>) -> Result<()> {
    let model_path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("model.json"));
    let model = PipelineModel::load(&model_path)?;
    if model.classes != cfg.vocab {
        return Err(Error::Validation(format!(
            "model classes ({}) differ from the configured task ({})",
            model.classes, cfg.vocab
        )));
    }
    let features = match features {
        Some(p) => p.to_path_buf(),
        None => default_features(cfg)?,
    };
    let x = load_feature_table(&features)?;
    finish(prediction_files(&cfg.output_dir, "", &model, &x)?)
}

pub fn run_ensemble(cfg: &RunConfig) -> Result<()> {
    let Method::Ensemble { files, config } = &cfg.method else {
        return Err(Error::Config("ensemble needs an [ensemble] section".into()));
    };
    let inputs = files
        .iter()
        .map(|p| load_probabilities(p, &cfg.vocab))
        .collect::<Result<Vec<_>>>()?;
    let fused = soft_vote(&inputs, config)?;
    let labels = predict_from_probs(&fused);
    let dir = &cfg.output_dir;
    finish(vec![
        out(dir, "ensemble_probabilities.csv", fused.to_csv_string()),
        out(dir, "ensemble_predictions.csv", labels.to_csv_string()),
    ])
}

pub fn run_evaluate(cfg: &RunConfig, predictions: Option<&Path>, labels: Option<&Path>) -> Result<String> {
    let dir = &cfg.output_dir;
    let predictions = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("predictions.csv"));
    let labels = match labels {
        Some(p) => p.to_path_buf(),
        None => cfg
            .data
            .devel_labels
            .clone()
            .ok_or_else(|| Error::Config("no --labels given and no devel labels configured".into()))?,
    };
    let reference = load_labels(&labels, &cfg.vocab)?;
    let predicted = load_labels(&predictions, &cfg.vocab)?;
    let cm = confusion(&reference, &predicted)?;
    let report = score(&cm, cfg.combined_weights)?;
    let text = report.to_text(&cfg.vocab);
    finish(vec![
        out(dir, "scores.csv", report.to_csv_string()),
        out(dir, "confusion.csv", cm.to_csv_string()),
        out(dir, "report.txt", text.clone()),
    ])?;
    Ok(text)
}

fn pseudo_round_of(source: &str) -> Option<usize> {
    source.strip_prefix("pseudo:").and_then(|r| r.parse().ok())
}

fn labels_with_sources(y: &LabelVector, sources: &HashMap<String, String>) -> String {
    let mut s = String::from("segment_id,label,source\n");
    for (id, &l) in y.segment_ids().iter().zip(y.labels()) {
        let src = sources.get(id).map(String::as_str).unwrap_or("gold");
        s.push_str(&format!("{id},{},{src}\n", y.vocab().name(l)));
    }
    s
}

/// Highest top-class score an SVM can emit for `k` classes.
fn svm_score_ceiling(k: usize) -> f64 {
    let pairs = (k * (k - 1) / 2) as f64;
    k as f64 / (pairs + 1.0)
}

/// Runs one pseudo-labeling round: score the unlabeled pool, append the
/// confident segments, retrain on the augmented set.
///
/// Labels are written with a `source` column (`gold` or `pseudo:<round>`).
/// Feeding those files back as the training set runs the next round;
/// segments already pseudo-labelled are dropped from the pool, and the
/// command refuses once `max_rounds` rounds exist.
pub fn run_pseudo_label(cfg: &RunConfig) -> Result<()> {
    let (pl_cfg, scores_path, model_path) = cfg
        .pseudo_label
        .clone()
        .ok_or_else(|| Error::Config("pseudo-label needs a [pseudo_label] section".into()))?;
    let spec = cfg.pipeline_spec()?;
    let unlabeled_path = cfg
        .data
        .unlabeled_features
        .as_ref()
        .ok_or_else(|| Error::Config("pseudo-label needs data.unlabeled_features".into()))?;
    let (x, y) = cfg.train()?;
    let mut sources = match &cfg.data.train_labels {
        Some(p) => load_label_sources(p)?,
        None => HashMap::new(),
    };
    let round = sources.values().filter_map(|s| pseudo_round_of(s)).max().unwrap_or(0) + 1;
    if round > pl_cfg.max_rounds {
        return Err(Error::Config(format!(
            "training labels already contain {} pseudo-label round(s); max_rounds is {}",
            round - 1,
            pl_cfg.max_rounds
        )));
    }
    let pseudo_ids: HashSet<&String> = sources
        .iter()
        .filter(|(_, s)| pseudo_round_of(s).is_some())
        .map(|(id, _)| id)
        .collect();
    let raw_pool = load_feature_table(unlabeled_path)?;
    let keep: Vec<usize> = (0..raw_pool.n_rows())
        .filter(|&i| !pseudo_ids.contains(&raw_pool.segment_ids()[i]))
        .collect();
    let pool = raw_pool.select_rows(&keep);

    let scores = if let Some(p) = &scores_path {
        load_probabilities(p, &cfg.vocab)?
    } else {
        let scorer = match &model_path {
            Some(p) => PipelineModel::load(p)?,
            None => train_pipeline(&x, &y, &spec)?,
        };
        let ceiling = svm_score_ceiling(cfg.vocab.len());
        if scorer.model_type() == "svm" && pl_cfg.confidence_threshold > ceiling {
            warn!(
                "svm scores never exceed {ceiling:.4} for {} classes; threshold {} admits nothing",
                cfg.vocab.len(),
                pl_cfg.confidence_threshold
            );
        }
        scorer.scores(&pool)?
    };
    let step = pseudo_label_round(&x, &y, &pool, &scores, &pl_cfg, round)?;
    info!("round {round}: {} segments added", step.report.segments_added);
    for id in &step.report.added_ids {
        sources.insert(id.clone(), format!("pseudo:{round}"));
    }
    let model = train_pipeline(&step.features, &step.labels, &spec)?;
    let dir = &cfg.output_dir;
    finish(vec![
        out(dir, "augmented_features.csv", step.features.to_csv_string()),
        out(dir, "augmented_labels.csv", labels_with_sources(&step.labels, &sources)),
        out(dir, "pseudo_label_report.csv", pseudo_report_csv(&[step.report], &cfg.vocab)),
        out(dir, "model.json", model.to_json()?),
    ])
}

pub fn run_gen_synthetic(spec: &BlobSpec, dir: &Path) -> Result<()> {
    let task = gaussian_blobs(spec)?;
    let informative: Vec<String> = task
        .informative_columns
        .iter()
        .map(|&j| task.train_x.feature_names()[j].clone())
        .collect();
    finish(vec![
        out(dir, "train_features.csv", task.train_x.to_csv_string()),
        out(dir, "train_labels.csv", task.train_y.to_csv_string()),
        out(dir, "test_features.csv", task.test_x.to_csv_string()),
        out(dir, "test_labels.csv", task.test_y.to_csv_string()),
        out(dir, "informative_columns.txt", informative.join("\n") + "\n"),
    ])
}

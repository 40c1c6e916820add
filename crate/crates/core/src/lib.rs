//! Segment-level classification pipeline.
//!
//! The crate covers the full path from per-segment feature tables to scored
//! predictions: ingestion and standardization ([`dataset`]), one-way ANOVA
//! feature ranking ([`feature_selection`]), an RBF C-SVC trained with SMO, a
//! CART random forest and a KNN classifier ([`classifiers`]), weighted soft
//! voting and pseudo-labeling ([`ensemble`]), and micro-F1 / macro-F1 / UAR
//! evaluation ([`metrics`]). [`pipeline`] ties the stages into a single
//! persisted model.
//!
//! Data-parallel loops (kernel rows, binary machines, trees, per-column
//! scoring, per-row prediction) run on rayon when the `parallel` feature is
//! enabled and fall back to plain iterators otherwise. Results are assembled
//! in index order either way, so outputs are bit-identical across both modes.

pub mod classifiers;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod feature_selection;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod synthetic;

pub use dataset::{ClassVocabulary, FeatureTable, LabelVector, Standardizer};
pub use ensemble::ProbabilityMatrix;
pub use error::{Error, Result};

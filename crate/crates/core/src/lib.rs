//! Isotopic cluster identification in high-resolution mass spectra,
//! intensity and shape summary measures per cluster, and ridge-logistic
//! evaluation of those measures under double cross-validation.
//!
//! The stages are independent modules that exchange plain data:
//!
//! 1. [`spectrum_io`] reads profile spectra and the cohort table.
//! 2. [`peak_detection`] thresholds each spectrum into intervals and keeps
//!    apexes with an isotopic neighbour.
//! 3. [`cluster_id`] pools apexes across samples and groups them into
//!    isotopic clusters with consensus positions.
//! 4. [`quantify`] measures every consensus peak in every sample.
//! 5. [`measures`] derives per-cluster intensity and shape features.
//! 6. [`classify`] tunes and evaluates ridge logistic regression.
//!
//! [`synthgen`] renders synthetic corpora with known clusters and
//! [`pipeline`] runs all stages from one configuration file.

pub mod classify;
pub mod cluster_id;
pub mod error;
pub mod measures;
pub mod peak_detection;
pub mod pipeline;
pub mod quantify;
pub mod spectrum_io;
pub mod stats;
pub mod synthgen;
mod union_find;

pub use classify::{
    double_cv, external_validate, fit_ridge, metrics, random_split, tune_lambda, Cohort, CvConfig, CvReport,
    FeatureRecipe, InnerScheme, MeasureSource, Metrics, RidgeModel, StatsScope,
};
pub use cluster_id::{identify_clusters, ClusterParams, IsotopicCluster, PooledPeak, PruneMode};
pub use error::{Error, Result};
pub use measures::{compute_measure, summarize, Basis, FeatureMatrix, MeasureKind, MeasureSpec, ReferenceStats};
pub use peak_detection::{detect, threshold_intervals, DetectedInterval, DetectionParams, PeakList, SampleDetection};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport, Stage, StageError};
pub use quantify::{quantify, quantify_and_prune, QuantifiedMatrix, QuantifyParams};
pub use spectrum_io::{ClassLabel, MzRange, RawSpectrum, SampleRecord, SampleSet, SampleTable};
pub use synthgen::{generate_corpus, GroundTruth, SyntheticConfig, SyntheticCorpus};
